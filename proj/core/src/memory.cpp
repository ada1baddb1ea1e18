// SPDX-License-Identifier: Apache-2.0
#include "moeplan/memory.hpp"

#include <string>

#include "moeplan/error.hpp"

namespace moeplan {

using nlohmann::json;

void validate_workload(const WorkloadSpec& w) {
  if (w.prompt_len < 1) throw Error(ErrorCode::kInvalidArgument, "prompt_len", "prompt_len must be >= 1");
  if (w.decode_len < 0) throw Error(ErrorCode::kInvalidArgument, "decode_len", "decode_len must be >= 0");
  if (w.num_sequences < 1) {
    throw Error(ErrorCode::kInvalidArgument, "num_sequences", "num_sequences must be >= 1");
  }
}

bool on_omega_grid(double omega) {
  const double tenths = omega * 10.0;
  return omega >= 0.0 && omega <= 1.0 && std::abs(tenths - std::round(tenths)) < 1e-9;
}

void validate_plan(const ModelSpec& model, const BatchingPlan& p) {
  auto fail = [](const char* field, const std::string& msg) {
    throw Error(ErrorCode::kInfeasiblePlan, field, msg);
  };
  if (p.B < 1) fail("B", "B must be >= 1");
  if (p.b_a < 1) fail("b_a", "b_a must be >= 1");
  if (p.b_e < 1) fail("b_e", "b_e must be >= 1");
  if (!on_omega_grid(p.omega)) fail("omega", "omega must be a multiple of 0.1 in [0, 1]");
  const std::int64_t g = p.gpu_sequences();
  if (g > 0 && p.b_a > g) {
    fail("b_a", "b_a = " + std::to_string(p.b_a) + " exceeds the GPU attention share " +
                    std::to_string(g));
  }
  if (p.s_params < 0 || p.s_params > model.model_bytes()) {
    fail("s_params", "s_params must lie in [0, S_Model]");
  }
  if (p.s_expert < 0) fail("s_expert", "s_expert must be >= 0");
  if (!cache_layout(model, p.s_params).all_experts_cached() && p.s_expert < 2 * model.expert_bytes) {
    fail("s_expert", "s_expert must hold at least two experts while any expert is offloaded");
  }
}

json to_json(const BatchingPlan& p) {
  return json{{"B", p.B},           {"b_a", p.b_a},          {"b_e", p.b_e},
              {"omega", p.omega},   {"s_expert", p.s_expert}, {"s_params", p.s_params}};
}

BatchingPlan plan_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kSchemaError, "plan", "plan must be an object");
  auto get = [&](const char* f) -> const json& {
    auto it = doc.find(f);
    if (it == doc.end() || !it->is_number()) {
      throw Error(ErrorCode::kSchemaError, f, std::string("plan.") + f + " is missing or not a number");
    }
    return *it;
  };
  BatchingPlan p;
  p.B = get("B").get<std::int64_t>();
  p.b_a = get("b_a").get<std::int64_t>();
  p.b_e = get("b_e").get<std::int64_t>();
  p.omega = get("omega").get<double>();
  p.s_expert = get("s_expert").get<Bytes>();
  p.s_params = get("s_params").get<Bytes>();
  return p;
}

json to_json(const MemoryFootprint& fp) {
  return json{{"s_kv_cpu", fp.s_kv_cpu},         {"s_kv_gpu", fp.s_kv_gpu},
              {"s_is", fp.s_is},                 {"s_model", fp.s_model},
              {"s_dense", fp.s_dense},           {"s_expert", fp.s_expert},
              {"s_params", fp.s_params},         {"host_total", fp.host_total},
              {"gpu_total", fp.gpu_total},       {"host_feasible", fp.host_feasible},
              {"gpu_feasible", fp.gpu_feasible}};
}

MemoryFootprint footprint_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kSchemaError, "footprint", "footprint must be an object");
  MemoryFootprint fp;
  fp.s_kv_cpu = doc.value("s_kv_cpu", Bytes{0});
  fp.s_kv_gpu = doc.value("s_kv_gpu", Bytes{0});
  fp.s_is = doc.value("s_is", Bytes{0});
  fp.s_model = doc.value("s_model", Bytes{0});
  fp.s_dense = doc.value("s_dense", Bytes{0});
  fp.s_expert = doc.value("s_expert", Bytes{0});
  fp.s_params = doc.value("s_params", Bytes{0});
  fp.host_total = doc.value("host_total", Bytes{0});
  fp.gpu_total = doc.value("gpu_total", Bytes{0});
  fp.host_feasible = doc.value("host_feasible", false);
  fp.gpu_feasible = doc.value("gpu_feasible", false);
  return fp;
}

Bytes kv_bytes_per_sequence(const ModelSpec& m, const WorkloadSpec& w) {
  return w.max_context() * m.kv_bytes_per_token();
}

Bytes kv_cpu_bytes(const ModelSpec& m, const WorkloadSpec& w, std::int64_t B) {
  return B * kv_bytes_per_sequence(m, w);
}

Bytes kv_gpu_bytes(const ModelSpec& m, const WorkloadSpec& w, const BatchingPlan& p) {
  if (w.phase == Phase::kPrefill) return 0;
  return p.effective_b_a() * w.max_context() * m.kv_bytes_per_token_layer;
}

Bytes attention_activation_bytes(const ModelSpec& m, const WorkloadSpec& w, std::int64_t seqs) {
  const auto upproject = static_cast<Bytes>(std::llround(
      static_cast<double>(seqs * w.context_len() * m.kv_bytes_per_token_layer) *
      (m.kv_upproject_factor - 1.0)));
  if (w.phase == Phase::kPrefill) {
    return seqs * w.prompt_len * (m.attn_activation_bytes_per_token + m.kv_bytes_per_token_layer) +
           upproject;
  }
  return seqs * m.attn_activation_bytes_per_token + upproject;
}

IntermediateBreakdown intermediate_breakdown(const ModelSpec& m, const WorkloadSpec& w,
                                             const BatchingPlan& p) {
  IntermediateBreakdown out;
  const std::int64_t t = w.tokens_in_flight();
  out.hidden = p.B * t * m.hidden_bytes_per_token;
  out.attention = attention_activation_bytes(m, w, p.effective_b_a());
  out.expert = std::min(p.b_e, p.B * t * m.top_k) * m.expert_activation_bytes_per_token;
  return out;
}

Bytes intermediate_bytes(const ModelSpec& m, const WorkloadSpec& w, const BatchingPlan& p) {
  return intermediate_breakdown(m, w, p).total();
}

MemoryFootprint check_constraints(const ModelSpec& m, const HardwareProfile& hw,
                                  const WorkloadSpec& w, const BatchingPlan& p) {
  MemoryFootprint fp;
  fp.s_kv_cpu = kv_cpu_bytes(m, w, p.B);
  fp.s_kv_gpu = kv_gpu_bytes(m, w, p);
  fp.s_is = intermediate_bytes(m, w, p);
  fp.s_model = m.model_bytes();
  fp.s_dense = m.dense_bytes_per_layer();
  fp.s_expert = p.s_expert;
  fp.s_params = p.s_params;
  fp.host_total = fp.s_kv_cpu + fp.s_model;
  fp.gpu_total = fp.s_params + fp.s_expert + fp.s_dense + fp.s_kv_gpu + fp.s_is;
  fp.host_feasible = fp.host_total <= hw.m_c;
  fp.gpu_feasible = fp.gpu_total <= hw.m_g;
  return fp;
}

std::int64_t max_feasible_B(const ModelSpec& m, const HardwareProfile& hw, const WorkloadSpec& w,
                            const BatchingPlan& plan) {
  const Bytes per_seq = kv_bytes_per_sequence(m, w);
  const Bytes room = hw.m_c - m.model_bytes();
  const std::int64_t host_cap = room > 0 && per_seq > 0 ? room / per_seq : 0;
  auto feasible = [&](std::int64_t B) {
    BatchingPlan p = plan;
    p.B = B;
    return check_constraints(m, hw, w, p).feasible();
  };
  if (host_cap < 1 || !feasible(1)) {
    throw Error(ErrorCode::kNoFeasibleB, "B",
                host_cap < 1 ? "host memory cannot hold the model plus one sequence's KV-cache"
                             : "GPU memory cannot hold the plan even at B = 1");
  }
  std::int64_t lo = 1, hi = host_cap;
  while (lo < hi) {
    const std::int64_t mid = lo + (hi - lo + 1) / 2;
    if (feasible(mid)) lo = mid;
    else hi = mid - 1;
  }
  return lo;
}

Bytes CacheLayout::cached_bytes() const {
  Bytes total = cached_expert_bytes;
  for (Bytes d : dense_cached) total += d;
  return total;
}

bool CacheLayout::all_experts_cached() const {
  for (const auto& layer : expert_cached) {
    for (bool c : layer) {
      if (!c) return false;
    }
  }
  return true;
}

CacheLayout cache_layout(const ModelSpec& m, Bytes s_params) {
  CacheLayout layout;
  const auto L = static_cast<std::size_t>(m.num_layers);
  const auto E = static_cast<std::size_t>(m.experts_per_layer);
  layout.dense_cached.assign(L, 0);
  layout.expert_cached.assign(L, std::vector<bool>(E, false));
  Bytes remaining = std::max<Bytes>(s_params, 0);
  for (std::size_t l = 0; l < L && remaining > 0; ++l) {
    layout.dense_cached[l] = std::min(remaining, m.dense_bytes_per_layer());
    remaining -= layout.dense_cached[l];
  }
  for (std::size_t e = 0; e < E && remaining >= m.expert_bytes; ++e) {
    for (std::size_t l = 0; l < L && remaining >= m.expert_bytes; ++l) {
      layout.expert_cached[l][e] = true;
      layout.cached_expert_bytes += m.expert_bytes;
      remaining -= m.expert_bytes;
    }
  }
  return layout;
}

}  // namespace moeplan
