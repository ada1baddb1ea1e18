// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moeplan/hardware.hpp"
#include "moeplan/memory.hpp"
#include "moeplan/model.hpp"

namespace moeplan {

struct TrafficPolicy {
  enum class Kind { kFullKvOffload, kGpuKvCache };
  Kind kind = Kind::kFullKvOffload;
  Bytes capacity = 0;  // GPU KV capacity for kGpuKvCache

  static TrafficPolicy full_offload() { return {}; }
  static TrafficPolicy gpu_cache(Bytes capacity) { return {Kind::kGpuKvCache, capacity}; }
  std::string name() const;
};

struct TrafficBreakdown {
  std::int64_t batch = 0;  // sequences per pass after the policy's cap
  std::int64_t passes = 0;
  Bytes weight_bytes = 0;
  Bytes kv_bytes = 0;
  Bytes total() const { return weight_bytes + kv_bytes; }
};

/// Weight bytes fetched over HtoD by one forward pass (everything not
/// resident in s_params).
Bytes forward_weight_traffic(const ModelSpec& model, const BatchingPlan& plan);

/// Cumulative HtoD bytes to prefill and decode all sequences of the dataset.
/// Throws Error{kInfeasiblePolicy} when a GPU KV cache cannot hold one
/// sequence.
TrafficBreakdown dataset_traffic(const ModelSpec& model, const HardwareProfile& hw,
                                 const WorkloadSpec& w, const TrafficPolicy& policy,
                                 const BatchingPlan& plan);

struct TrafficRow {
  std::int64_t num_sequences = 0;
  std::string policy;
  Bytes bytes = 0;
};

void write_traffic_csv(std::ostream& os, const std::vector<TrafficRow>& rows);

struct CostReport {
  double total_power = 0.0;
  double total_price = 0.0;
  double throughput = 0.0;
  double tokens_per_joule = 0.0;
  double tokens_per_currency = 0.0;
};

/// Throws Error{kInvalidArgument} for an empty component list.
CostReport cost_report(const std::vector<Component>& components, double throughput);
nlohmann::json to_json(const CostReport& r);

std::vector<Component> components_from_json(const nlohmann::json& doc);

}  // namespace moeplan
