// SPDX-License-Identifier: Apache-2.0
#include "moeplan/traffic.hpp"

#include "moeplan/error.hpp"

namespace moeplan {

using nlohmann::json;

std::string TrafficPolicy::name() const {
  return kind == Kind::kFullKvOffload ? "full_kv_offload" : "gpu_kv_cache";
}

Bytes forward_weight_traffic(const ModelSpec& model, const BatchingPlan& plan) {
  return model.model_bytes() - cache_layout(model, plan.s_params).cached_bytes();
}

TrafficBreakdown dataset_traffic(const ModelSpec& model, const HardwareProfile& /*hw*/,
                                 const WorkloadSpec& w, const TrafficPolicy& policy,
                                 const BatchingPlan& plan) {
  validate_workload(w);
  if (plan.B < 1) throw Error(ErrorCode::kInvalidArgument, "B", "B must be >= 1");
  TrafficBreakdown out;
  out.batch = plan.B;
  const Bytes per_seq = kv_bytes_per_sequence(model, w);
  if (policy.kind == TrafficPolicy::Kind::kGpuKvCache) {
    if (policy.capacity <= 0 || policy.capacity < per_seq) {
      throw Error(ErrorCode::kInfeasiblePolicy, "capacity",
                  "GPU KV capacity cannot hold a single sequence's KV-cache");
    }
    out.batch = std::min(plan.B, policy.capacity / per_seq);
  }
  out.passes = (w.num_sequences + out.batch - 1) / out.batch;
  const Bytes weights_per_pass = (w.decode_len + 1) * forward_weight_traffic(model, plan);
  out.weight_bytes = out.passes * weights_per_pass;
  if (policy.kind == TrafficPolicy::Kind::kFullKvOffload && w.decode_len > 0) {
    // Decode step s reads the context written so far: prompt_len + s tokens.
    BatchingPlan p = plan;
    p.B = out.batch;
    const std::int64_t gpu_seqs = p.gpu_sequences();
    const std::int64_t context_sum =
        w.decode_len * w.prompt_len + w.decode_len * (w.decode_len - 1) / 2;
    out.kv_bytes = out.passes * gpu_seqs * context_sum * model.kv_bytes_per_token();
  }
  return out;
}

void write_traffic_csv(std::ostream& os, const std::vector<TrafficRow>& rows) {
  os << "num_sequences,policy,bytes\n";
  for (const TrafficRow& r : rows) os << r.num_sequences << ',' << r.policy << ',' << r.bytes << '\n';
}

CostReport cost_report(const std::vector<Component>& components, double throughput) {
  if (components.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "components", "component list is empty");
  }
  CostReport r;
  for (const Component& c : components) {
    r.total_power += c.power_watts;
    r.total_price += c.price;
  }
  r.throughput = throughput;
  r.tokens_per_joule = r.total_power > 0.0 ? throughput / r.total_power : 0.0;
  r.tokens_per_currency = r.total_price > 0.0 ? throughput / r.total_price : 0.0;
  return r;
}

json to_json(const CostReport& r) {
  return json{{"total_power", r.total_power},
              {"total_price", r.total_price},
              {"throughput", r.throughput},
              {"tokens_per_joule", r.tokens_per_joule},
              {"tokens_per_currency", r.tokens_per_currency}};
}

std::vector<Component> components_from_json(const json& doc) {
  const json& list = doc.is_object() && doc.contains("components") ? doc["components"] : doc;
  if (!list.is_array()) {
    throw Error(ErrorCode::kSchemaError, "components", "components must be an array");
  }
  std::vector<Component> out;
  for (const json& c : list) {
    if (!c.is_object() || !c.contains("name") || !c["name"].is_string() ||
        !c.contains("power_watts") || !c["power_watts"].is_number() || !c.contains("price") ||
        !c["price"].is_number()) {
      throw Error(ErrorCode::kSchemaError, "components",
                  "each component needs name, power_watts and price");
    }
    const std::int64_t count = c.value("count", std::int64_t{1});
    if (count < 1) throw Error(ErrorCode::kSchemaError, "count", "component count must be >= 1");
    for (std::int64_t i = 0; i < count; ++i) {
      out.push_back({c["name"].get<std::string>(), c["power_watts"].get<double>(),
                     c["price"].get<double>()});
    }
  }
  return out;
}

}  // namespace moeplan
