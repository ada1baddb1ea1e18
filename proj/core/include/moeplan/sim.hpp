// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moeplan/dag.hpp"
#include "moeplan/hardware.hpp"
#include "moeplan/memory.hpp"
#include "moeplan/model.hpp"

namespace moeplan {

struct RoutingModel {
  enum class Mode { kEven, kSampled };
  Mode mode = Mode::kEven;
  double concentration = 1.0;  // symmetric Dirichlet parameter
  std::uint64_t seed = 0;
};

std::string_view routing_mode_name(RoutingModel::Mode m);
RoutingModel::Mode parse_routing_mode(std::string_view text);

/// Per-expert token counts for one layer; they sum to tokens * top_k.
/// Sampled mode draws expert probabilities from a symmetric Dirichlet and
/// the counts from the resulting multinomial, seeded by (seed, layer).
std::vector<std::int64_t> sample_routing(const ModelSpec& model, std::int64_t tokens,
                                         const RoutingModel& routing, int layer_index);

struct TraceEvent {
  double time = 0.0;
  int node = 0;
  NodeKind kind = NodeKind::kEntry;
  Resource resource = Resource::kGpuCompute;
  bool start = true;
};

struct SimReport {
  double makespan = 0.0;
  std::array<double, kNumResources> busy{};
  std::array<double, kNumResources> idle_fraction{};
  Bytes bytes_htod = 0;
  Bytes bytes_dtoh = 0;
  Bytes peak_gpu_bytes = 0;
  ExpertCounts expert_tokens;  // [layer][expert]
  double mean_expert_batch = 0.0;
  double gpu_flops_utilization = 0.0;
  double throughput = 0.0;
  bool oom = false;
  std::int64_t jobs = 0;
};

nlohmann::json to_json(const SimReport& r);

/// Event-driven run of one forward pass on four single-server resources,
/// each draining its jobs in the submission order of OrderPolicy.
SimReport simulate_plan(const ModelSpec& model, const HardwareProfile& hw,
                        const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                        const BatchingPlan& plan, const RoutingModel& routing, Phase phase,
                        std::vector<TraceEvent>* trace = nullptr);

/// |simulated makespan - critical path| / critical path, even routing.
double compare_with_estimate(const ModelSpec& model, const HardwareProfile& hw,
                             const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                             const BatchingPlan& plan, Phase phase);

/// One JSON object per line: time, node, kind, resource, action.
void write_trace(std::ostream& os, const std::vector<TraceEvent>& events);

}  // namespace moeplan
