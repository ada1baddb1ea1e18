// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"

namespace moeplan {
namespace {

using testing::plan;
using testing::workload;

class MixtralTraffic : public ::testing::Test {
 protected:
  ModelSpec m = preset("mixtral-8x7b");
  HardwareProfile hw = hardware_preset("a5000-c1");
  WorkloadSpec w = workload(512, 256, Phase::kDecode);
  BatchingPlan pl = plan(1620, 8, 256, 0.6, 2 * m.expert_bytes, 0);
  Bytes capacity = 4'000'000'000;
};

TEST_F(MixtralTraffic, OnePassFullyResidentIsKvOnly) {
  WorkloadSpec one = w;
  one.num_sequences = pl.B;
  BatchingPlan resident = pl;
  resident.s_params = m.model_bytes();
  const TrafficBreakdown t = dataset_traffic(m, hw, one, TrafficPolicy::full_offload(), resident);
  EXPECT_EQ(t.passes, 1);
  EXPECT_EQ(t.weight_bytes, 0);
  EXPECT_GT(t.kv_bytes, 0);
  EXPECT_EQ(t.total(), t.kv_bytes);
}

TEST_F(MixtralTraffic, PerForwardExpertTraffic) {
  BatchingPlan dense_only = pl;
  dense_only.s_params = m.num_layers * m.dense_bytes_per_layer();
  const double experts = static_cast<double>(forward_weight_traffic(m, dense_only));
  EXPECT_EQ(experts, static_cast<double>(m.num_layers * m.experts_per_layer * m.expert_bytes));
  EXPECT_NEAR(experts / 86e9, 1.0, 0.10) << experts;
  EXPECT_EQ(forward_weight_traffic(m, pl), m.model_bytes());
}

TEST_F(MixtralTraffic, KvBytesMatchDecodeContexts) {
  WorkloadSpec one = w;
  one.num_sequences = pl.B;
  const TrafficBreakdown t = dataset_traffic(m, hw, one, TrafficPolicy::full_offload(), pl);
  Bytes context = 0;
  for (std::int64_t s = 0; s < w.decode_len; ++s) context += w.prompt_len + s;
  EXPECT_EQ(t.kv_bytes, pl.gpu_sequences() * context * m.kv_bytes_per_token());
  EXPECT_EQ(t.weight_bytes, (w.decode_len + 1) * m.model_bytes());
}

TEST_F(MixtralTraffic, GpuCacheCapsBatch) {
  WorkloadSpec d = w;
  d.num_sequences = 1000;
  const TrafficBreakdown t = dataset_traffic(m, hw, d, TrafficPolicy::gpu_cache(capacity), pl);
  const Bytes per_seq = (w.prompt_len + w.decode_len) * m.kv_bytes_per_token();
  EXPECT_EQ(t.batch, capacity / per_seq);
  EXPECT_EQ(t.passes, (1000 + t.batch - 1) / t.batch);
  EXPECT_EQ(t.kv_bytes, 0);
}

TEST_F(MixtralTraffic, CrossoverOnDoublingGrid) {
  std::int64_t crossover = 0;
  for (std::int64_t n = 1; n <= 1024 * pl.B; n *= 2) {
    WorkloadSpec d = w;
    d.num_sequences = n;
    const double full = static_cast<double>(dataset_traffic(m, hw, d, TrafficPolicy::full_offload(), pl).total());
    const double cached =
        static_cast<double>(dataset_traffic(m, hw, d, TrafficPolicy::gpu_cache(capacity), pl).total());
    if (n < 8) EXPECT_LT(cached, full) << n;
    if (crossover == 0 && full < cached) crossover = n;
    if (n >= 32 * pl.B) EXPECT_GE(cached / full, 10.0) << n;
  }
  EXPECT_GT(crossover, 1);
  EXPECT_LT(crossover, 32 * pl.B);
}

TEST_F(MixtralTraffic, InfeasiblePolicy) {
  const Bytes per_seq = (w.prompt_len + w.decode_len) * m.kv_bytes_per_token();
  try {
    dataset_traffic(m, hw, w, TrafficPolicy::gpu_cache(per_seq - 1), pl);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInfeasiblePolicy);
  }
  EXPECT_NO_THROW(dataset_traffic(m, hw, w, TrafficPolicy::gpu_cache(per_seq), pl));
}

TEST_F(MixtralTraffic, MonotoneAndLinearInPasses) {
  for (TrafficPolicy policy : {TrafficPolicy::full_offload(), TrafficPolicy::gpu_cache(capacity)}) {
    WorkloadSpec d = w;
    d.num_sequences = 1;
    const TrafficBreakdown unit = dataset_traffic(m, hw, d, policy, pl);
    Bytes prev = 0;
    for (std::int64_t n = 1; n <= 5000; n += 37) {
      d.num_sequences = n;
      const TrafficBreakdown t = dataset_traffic(m, hw, d, policy, pl);
      EXPECT_GE(t.total(), prev);
      prev = t.total();
    }
    for (std::int64_t k : {1, 2, 3, 7}) {
      d.num_sequences = k * unit.batch;
      EXPECT_EQ(dataset_traffic(m, hw, d, policy, pl).total(), k * unit.total()) << policy.name();
    }
  }
}

TEST_F(MixtralTraffic, PolicyIsolation) {
  WorkloadSpec d = w;
  d.num_sequences = 3000;
  const Bytes base = dataset_traffic(m, hw, d, TrafficPolicy::full_offload(), pl).weight_bytes;
  TrafficPolicy odd = TrafficPolicy::full_offload();
  odd.capacity = 7;
  EXPECT_EQ(dataset_traffic(m, hw, d, odd, pl).weight_bytes, base);
}

TEST(TrafficCsv, Header) {
  std::ostringstream os;
  write_traffic_csv(os, {{4, "full_kv_offload", 10}, {4, "gpu_kv_cache", 20}});
  EXPECT_EQ(os.str(), "num_sequences,policy,bytes\n4,full_kv_offload,10\n4,gpu_kv_cache,20\n");
}

std::vector<Component> load_components(const char* file) {
  std::ifstream in(std::string(MOEPLAN_FIXTURE_DIR) + "/" + file);
  return components_from_json(nlohmann::json::parse(in));
}

TEST(Cost, TableSums) {
  const CostReport base = cost_report(load_components("table5_baseline.json"), 1000.0);
  EXPECT_EQ(base.total_power, 1780.0);
  EXPECT_EQ(base.total_price, 22300.0);
  const CostReport single = cost_report(load_components("table5_single.json"), 1000.0);
  EXPECT_EQ(single.total_power, 380.0);
  EXPECT_EQ(single.total_price, 4800.0);
  const double ratio = 100.0 * single.total_price / base.total_price;
  EXPECT_GE(std::floor(ratio), 21.0);
  EXPECT_LE(std::round(ratio), 22.0);
  EXPECT_DOUBLE_EQ(single.tokens_per_joule, 1000.0 / 380.0);
  EXPECT_DOUBLE_EQ(single.tokens_per_currency, 1000.0 / 4800.0);
}

TEST(Cost, EmptyListRejected) {
  try {
    cost_report({}, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(Cost, PermutationInvariant) {
  std::vector<Component> c = load_components("table5_baseline.json");
  const CostReport ref = cost_report(c, 5.0);
  std::mt19937 rng(5);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(c.begin(), c.end(), rng);
    const CostReport r = cost_report(c, 5.0);
    EXPECT_EQ(r.total_power, ref.total_power);
    EXPECT_EQ(r.total_price, ref.total_price);
  }
}

TEST(Cost, SchemaErrors) {
  EXPECT_THROW(components_from_json(nlohmann::json{{"components", 3}}), Error);
  EXPECT_THROW(components_from_json(nlohmann::json::array({{{"name", "x"}}})), Error);
}

}  // namespace
}  // namespace moeplan
