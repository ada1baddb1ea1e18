// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "moeplan/moeplan.hpp"

namespace {

using namespace moeplan;

struct Setup {
  ModelSpec model;
  HardwareProfile hw;
  std::vector<LatencyTable> tables;
  WorkloadSpec w;

  Setup(const char* model_name, const char* hw_name) : model(preset(model_name)), hw(hardware_preset(hw_name)) {
    tables = synth_profile(hw, model);
    w.prompt_len = 512;
    w.decode_len = 256;
  }
};

BatchingPlan decode_plan(const Setup& s) {
  BatchingPlan p{1, 64, 256, 0.3, 4 * s.model.expert_bytes, 0};
  p.B = max_feasible_B(s.model, s.hw, s.w, p);
  return p;
}

void BM_BuildForwardDag(benchmark::State& state) {
  const Setup s("mixtral-8x7b", "a5000-c1");
  const BatchingPlan p = decode_plan(s);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_forward_dag(s.model, s.hw, s.tables, s.w, p, Phase::kDecode));
  }
}
BENCHMARK(BM_BuildForwardDag);

void BM_CriticalPath(benchmark::State& state) {
  const Setup s("deepseek-v2-like", "a5000-c2");
  const Dag dag = build_forward_dag(s.model, s.hw, s.tables, s.w, decode_plan(s), Phase::kDecode);
  for (auto _ : state) benchmark::DoNotOptimize(critical_path(dag));
  state.counters["nodes"] = static_cast<double>(dag.nodes.size());
}
BENCHMARK(BM_CriticalPath);

void BM_Simulate(benchmark::State& state) {
  const Setup s("mixtral-8x7b", "a5000-c1");
  const BatchingPlan p = decode_plan(s);
  const RoutingModel routing{RoutingModel::Mode::kSampled, 1.0, 1};
  for (auto _ : state) {
    benchmark::DoNotOptimize(simulate_plan(s.model, s.hw, s.tables, s.w, p, routing, Phase::kDecode));
  }
}
BENCHMARK(BM_Simulate);

void BM_Search(benchmark::State& state) {
  const Setup s("mixtral-8x7b", "a5000-c1");
  const Phase phase = state.range(0) == 0 ? Phase::kPrefill : Phase::kDecode;
  SearchStats stats;
  for (auto _ : state) {
    benchmark::DoNotOptimize(search(s.model, s.hw, s.tables, s.w, SearchSpace::defaults(), phase, &stats));
  }
  state.counters["candidates"] = static_cast<double>(stats.candidates);
  state.counters["evaluated"] = static_cast<double>(stats.evaluated);
}
BENCHMARK(BM_Search)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
