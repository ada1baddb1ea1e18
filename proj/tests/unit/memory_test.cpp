// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"

namespace moeplan {
namespace {

using testing::plan;
using testing::workload;

ModelSpec unit_model(Bytes kv) {
  auto doc = testing::unit_model_document();
  doc["kv_bytes_per_token_layer"] = kv;
  return load_model_spec(doc);
}

TEST(KvCpu, UnitCase) {
  EXPECT_EQ(kv_cpu_bytes(unit_model(2), workload(1, 0, Phase::kDecode), 1), 2);
}

TEST(KvCpu, MixtralContext768) {
  const ModelSpec m = preset("mixtral-8x7b");
  ASSERT_EQ(m.kv_bytes_per_token_layer, 4096);
  EXPECT_EQ(kv_cpu_bytes(m, workload(512, 256, Phase::kDecode), 1), 100'663'296);
}

TEST(KvCpu, Linear) {
  const ModelSpec m = preset("mixtral-8x7b");
  const auto w = workload(512, 256, Phase::kDecode);
  for (std::int64_t B : {1, 3, 100}) EXPECT_EQ(kv_cpu_bytes(m, w, 2 * B), 2 * kv_cpu_bytes(m, w, B));
}

TEST(KvGpu, AllCpuIsZero) {
  const ModelSpec m = preset("mixtral-8x7b");
  EXPECT_EQ(kv_gpu_bytes(m, workload(512, 256, Phase::kDecode), plan(64, 1, 64, 1.0, 0)), 0);
}

TEST(KvGpu, Arithmetic) {
  EXPECT_EQ(kv_gpu_bytes(unit_model(2), workload(60, 40, Phase::kDecode), plan(8, 4, 1, 0.0, 2)), 800);
  const ModelSpec m = preset("mixtral-8x7b");
  EXPECT_EQ(kv_gpu_bytes(m, workload(512, 256, Phase::kDecode), plan(128, 64, 64, 0.0, 0)),
            201'326'592);
}

TEST(KvGpu, PrefillIsZero) {
  const ModelSpec m = preset("mixtral-8x7b");
  EXPECT_EQ(kv_gpu_bytes(m, workload(512, 256, Phase::kPrefill), plan(128, 64, 64, 0.0, 0)), 0);
}

TEST(Intermediate, DecodeHiddenIsMegabytes) {
  const ModelSpec m = preset("mixtral-8x7b");
  ASSERT_EQ(m.hidden_bytes_per_token, 4096 * 2);
  const auto br = intermediate_breakdown(m, workload(512, 256, Phase::kDecode), plan(8192, 1, 1, 0.0, 0));
  EXPECT_EQ(br.hidden, 8192 * 8192);
  EXPECT_LT(br.total(), Bytes{100} << 20);
}

TEST(Intermediate, PrefillHiddenLinearInPrompt) {
  const ModelSpec m = preset("tiny-test");
  const auto p = plan(4, 2, 64, 0.0, 0);
  const auto a = intermediate_breakdown(m, workload(64, 0, Phase::kPrefill), p);
  const auto b = intermediate_breakdown(m, workload(128, 0, Phase::kPrefill), p);
  EXPECT_EQ(b.hidden, 2 * a.hidden);
  EXPECT_EQ(b.attention, 2 * a.attention);
}

TEST(Intermediate, OneExpertToken) {
  const ModelSpec m = preset("tiny-test");
  const auto br = intermediate_breakdown(m, workload(64, 0, Phase::kDecode), plan(4, 1, 1, 0.0, 0));
  EXPECT_EQ(br.expert, m.expert_activation_bytes_per_token);
}

TEST(Intermediate, UpProjectedAttention) {
  const ModelSpec m = preset("deepseek-v2-like");
  const auto w = workload(512, 256, Phase::kDecode);
  const Bytes latent = 768 * m.kv_bytes_per_token_layer;
  const Bytes expect = m.attn_activation_bytes_per_token +
                       static_cast<Bytes>(std::llround(static_cast<double>(latent) * (m.kv_upproject_factor - 1.0)));
  EXPECT_EQ(attention_activation_bytes(m, w, 1), expect);
}

TEST(Constraints, HostBoundary) {
  const ModelSpec m = preset("tiny-test");
  HardwareProfile hw = hardware_preset("tiny-test");
  hw.m_c = m.model_bytes();
  const auto fp = check_constraints(m, hw, workload(8, 8, Phase::kDecode), plan(1, 1, 64, 0.0, 2 * m.expert_bytes));
  EXPECT_FALSE(fp.host_feasible);
}

TEST(Constraints, HugeGpu) {
  const ModelSpec m = preset("tiny-test");
  HardwareProfile hw = hardware_preset("tiny-test");
  hw.m_g = Bytes{1} << 40;
  hw.m_c = Bytes{1} << 41;
  const auto fp = check_constraints(m, hw, workload(8, 8, Phase::kDecode), plan(4, 2, 64, 0.0, 2 * m.expert_bytes));
  EXPECT_TRUE(fp.gpu_feasible);
  EXPECT_TRUE(fp.feasible());
}

TEST(Constraints, TotalsEqualComponents) {
  const ModelSpec m = preset("tiny-test");
  const HardwareProfile hw = hardware_preset("tiny-test");
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> B(1, 300), ba(1, 64), be(1, 4096), frac(0, 10);
  for (int i = 0; i < 500; ++i) {
    BatchingPlan p = plan(B(rng), ba(rng), be(rng), static_cast<double>(frac(rng)) / 10.0,
                          2 * m.expert_bytes, (m.model_bytes() * frac(rng)) / 10);
    for (Phase ph : {Phase::kPrefill, Phase::kDecode}) {
      const auto w = workload(32, 16, ph);
      const auto fp = check_constraints(m, hw, w, p);
      EXPECT_EQ(fp.host_total, fp.s_kv_cpu + fp.s_model);
      EXPECT_EQ(fp.gpu_total, fp.s_params + fp.s_expert + fp.s_dense + fp.s_kv_gpu + fp.s_is);
      const auto o = oracle::footprint(m, w, p);
      EXPECT_EQ(fp.host_total, o.host);
      EXPECT_EQ(fp.gpu_total, o.gpu);
      EXPECT_EQ(fp.feasible(), oracle::feasible(m, hw, w, p));
    }
  }
}

TEST(MaxFeasibleB, HostBelowModel) {
  const ModelSpec m = preset("tiny-test");
  HardwareProfile hw = hardware_preset("tiny-test");
  hw.m_c = m.model_bytes() - 1;
  try {
    max_feasible_B(m, hw, workload(8, 8, Phase::kDecode), plan(1, 1, 64, 0.0, 2 * m.expert_bytes));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoFeasibleB);
  }
}

TEST(MaxFeasibleB, ExactDivisibility) {
  const ModelSpec m = preset("tiny-test");
  const auto w = workload(8, 8, Phase::kDecode);
  HardwareProfile hw = hardware_preset("tiny-test");
  hw.m_c = m.model_bytes() + 100 * kv_bytes_per_sequence(m, w);
  EXPECT_EQ(max_feasible_B(m, hw, w, plan(1, 1, 64, 0.0, 2 * m.expert_bytes)), 100);
}

TEST(MaxFeasibleB, MixtralAt256GB) {
  const ModelSpec m = preset("mixtral-8x7b");
  HardwareProfile hw = hardware_preset("a5000-c1");
  ASSERT_EQ(hw.m_c, Bytes{256'000'000'000});
  const auto w = workload(256, 32, Phase::kDecode);
  const std::int64_t B = max_feasible_B(m, hw, w, plan(1, 64, 1024, 0.0, 2 * m.expert_bytes));
  const std::int64_t expect = (hw.m_c - m.model_bytes()) / (32 * 288 * 4096);
  EXPECT_EQ(B, expect);
  // Same order as the 3640 operating point.
  EXPECT_GT(B, 3640);
  EXPECT_LT(B, 2 * 3640);
}

TEST(MaxFeasibleB, MatchesLinearScan) {
  const ModelSpec m = preset("tiny-test");
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::int64_t> mc(13, 40), mg(5, 12), ba(1, 16), be(1, 512), pl(1, 64),
      frac(0, 10);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    HardwareProfile hw = hardware_preset("tiny-test");
    hw.m_c = mc(rng) << 20;
    hw.m_g = mg(rng) << 20;
    const Phase ph = i % 2 ? Phase::kDecode : Phase::kPrefill;
    const auto w = workload(pl(rng), pl(rng), ph);
    const BatchingPlan p = plan(1, ba(rng), be(rng), static_cast<double>(frac(rng)) / 10.0,
                                2 * m.expert_bytes, (frac(rng) << 18));
    const std::int64_t limit = (hw.m_c - m.model_bytes()) / kv_bytes_per_sequence(m, w);
    const std::int64_t scan = oracle::scan_max_feasible_B(m, hw, w, p, std::max<std::int64_t>(limit, 0));
    if (scan == 0) {
      EXPECT_THROW(max_feasible_B(m, hw, w, p), Error);
    } else {
      EXPECT_EQ(max_feasible_B(m, hw, w, p), scan) << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Feasibility, DownwardClosed) {
  const ModelSpec m = preset("tiny-test");
  const HardwareProfile hw = hardware_preset("tiny-test");
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::int64_t> B(2, 200), ba(2, 32), be(2, 4096), slots(2, 4),
      sp(0, 4 << 20);
  int feasible_seen = 0;
  for (int i = 0; i < 2000; ++i) {
    const Phase ph = i % 2 ? Phase::kDecode : Phase::kPrefill;
    const auto w = workload(16, 16, ph);
    BatchingPlan p = plan(B(rng), ba(rng), be(rng), 0.0, slots(rng) * m.expert_bytes, sp(rng));
    if (!check_constraints(m, hw, w, p).feasible()) continue;
    ++feasible_seen;
    for (int field = 0; field < 5; ++field) {
      BatchingPlan q = p;
      switch (field) {
        case 0: q.B -= 1; break;
        case 1: q.b_a -= 1; break;
        case 2: q.b_e -= 1; break;
        case 3: q.s_expert = std::max(2 * m.expert_bytes, q.s_expert - m.expert_bytes); break;
        case 4: q.s_params /= 2; break;
      }
      EXPECT_TRUE(check_constraints(m, hw, w, q).feasible()) << i << " field " << field;
    }
  }
  EXPECT_GT(feasible_seen, 50);
}

TEST(ValidatePlan, Invariants) {
  const ModelSpec m = preset("tiny-test");
  const Bytes two = 2 * m.expert_bytes;
  EXPECT_NO_THROW(validate_plan(m, plan(8, 8, 64, 0.0, two)));
  EXPECT_NO_THROW(validate_plan(m, plan(8, 1, 64, 1.0, two)));
  EXPECT_THROW(validate_plan(m, plan(8, 9, 64, 0.0, two)), Error);
  EXPECT_THROW(validate_plan(m, plan(8, 5, 64, 0.5, two)), Error);
  EXPECT_THROW(validate_plan(m, plan(8, 1, 0, 0.0, two)), Error);
  EXPECT_THROW(validate_plan(m, plan(8, 1, 64, 0.25, two)), Error);
  EXPECT_THROW(validate_plan(m, plan(8, 1, 64, 0.0, m.expert_bytes)), Error);
  EXPECT_THROW(validate_plan(m, plan(8, 1, 64, 0.0, two, m.model_bytes() + 1)), Error);
  // Everything resident: the double-buffer floor no longer applies.
  EXPECT_NO_THROW(validate_plan(m, plan(8, 1, 64, 0.0, 0, m.model_bytes())));
}

TEST(PlanJson, RoundTrip) {
  const BatchingPlan p = plan(665, 16, 64, 0.6, 4194304, 465920);
  EXPECT_EQ(plan_from_json(to_json(p)), p);
  EXPECT_THROW(plan_from_json(nlohmann::json{{"B", 1}}), Error);
}

TEST(CacheLayout, DenseFirstThenRoundRobin) {
  const ModelSpec m = preset("tiny-test");
  const Bytes dense = m.dense_bytes_per_layer();
  auto c = cache_layout(m, dense + dense / 2);
  EXPECT_EQ(c.dense_cached[0], dense);
  EXPECT_EQ(c.dense_cached[1], dense / 2);
  EXPECT_EQ(c.cached_expert_bytes, 0);

  c = cache_layout(m, 2 * dense + 3 * m.expert_bytes);
  EXPECT_TRUE(c.expert_cached[0][0]);
  EXPECT_TRUE(c.expert_cached[1][0]);
  EXPECT_TRUE(c.expert_cached[0][1]);
  EXPECT_FALSE(c.expert_cached[1][1]);
  EXPECT_EQ(c.cached_bytes(), 2 * dense + 3 * m.expert_bytes);
  EXPECT_FALSE(c.all_experts_cached());
  EXPECT_TRUE(cache_layout(m, m.model_bytes()).all_experts_cached());
}

}  // namespace
}  // namespace moeplan
