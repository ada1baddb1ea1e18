// SPDX-License-Identifier: Apache-2.0
#include "moeplan/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "moeplan/error.hpp"

namespace moeplan {

using nlohmann::json;

CriticalPath critical_path_detail(const Dag& dag) {
  const std::vector<int> order = topological_order(dag);
  const Adjacency succ = out_adjacency(dag);
  CriticalPath cp;
  const std::size_t n = dag.nodes.size();
  std::vector<double> start(n, 0.0);
  std::vector<int> via(n, -1);
  cp.finish.assign(n, 0.0);
  for (int v : order) {
    const auto vi = static_cast<std::size_t>(v);
    const double f = start[vi] + dag.nodes[vi].duration;
    cp.finish[vi] = f;
    for (std::size_t k = succ.begin(v); k < succ.end(v); ++k) {
      const auto s = static_cast<std::size_t>(succ.index[k]);
      if (via[s] < 0 || f > start[s]) {
        start[s] = f;
        via[s] = v;
      }
    }
  }
  cp.length = cp.finish[static_cast<std::size_t>(dag.exit_id)];
  for (int v = dag.exit_id; v >= 0; v = via[static_cast<std::size_t>(v)]) cp.path.push_back(v);
  std::reverse(cp.path.begin(), cp.path.end());
  return cp;
}

double critical_path(const Dag& dag) { return critical_path_detail(dag).length; }

json to_json(const PlanEvaluation& e) {
  return json{{"phase", phase_name(e.phase)}, {"plan", to_json(e.plan)},
              {"t_forward", e.t_forward},     {"throughput", e.throughput},
              {"feasible", e.feasible},       {"reason", e.reason},
              {"footprint", to_json(e.footprint)}};
}

PlanEvaluation evaluation_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("plan")) {
    throw Error(ErrorCode::kSchemaError, "plan", "evaluation document needs a 'plan' object");
  }
  PlanEvaluation e;
  e.plan = plan_from_json(doc["plan"]);
  if (doc.contains("phase")) e.phase = parse_phase(doc["phase"].get<std::string>());
  e.t_forward = doc.value("t_forward", 0.0);
  e.throughput = doc.value("throughput", 0.0);
  e.feasible = doc.value("feasible", false);
  e.reason = doc.value("reason", std::string());
  if (doc.contains("footprint")) e.footprint = footprint_from_json(doc["footprint"]);
  return e;
}

namespace {

std::vector<std::int64_t> powers_of_two(std::int64_t lo, std::int64_t hi) {
  std::vector<std::int64_t> v;
  for (std::int64_t x = lo; x <= hi; x *= 2) v.push_back(x);
  return v;
}

template <typename T>
void check_grid(const std::vector<T>& g, const char* name) {
  if (g.empty()) throw Error(ErrorCode::kInvalidArgument, name, std::string(name) + " grid is empty");
  if (!std::is_sorted(g.begin(), g.end()) || std::adjacent_find(g.begin(), g.end()) != g.end()) {
    throw Error(ErrorCode::kInvalidArgument, name,
                std::string(name) + " grid must be strictly ascending");
  }
}

}  // namespace

SearchSpace SearchSpace::defaults() {
  SearchSpace s;
  s.B = powers_of_two(1, std::int64_t{1} << 20);
  s.b_a = powers_of_two(1, std::int64_t{1} << 16);
  s.b_e = powers_of_two(64, std::int64_t{1} << 15);
  for (int i = 0; i <= 10; ++i) s.omega.push_back(i / 10.0);
  s.expert_slots = {2, 4, 8, 16, 32};
  s.s_params_fractions = {0.0, 0.25, 0.5, 0.75, 1.0};
  return s;
}

void SearchSpace::validate() const {
  check_grid(B, "B");
  check_grid(b_a, "b_a");
  check_grid(b_e, "b_e");
  check_grid(omega, "omega");
  check_grid(expert_slots, "expert_slots");
  check_grid(s_params_fractions, "s_params_fractions");
  if (B.front() < 1 || b_a.front() < 1 || b_e.front() < 1) {
    throw Error(ErrorCode::kInvalidArgument, "b_a", "batch grids must start at >= 1");
  }
  if (expert_slots.front() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "expert_slots", "expert buffer needs >= 2 slots");
  }
  for (double o : omega) {
    if (!on_omega_grid(o)) {
      throw Error(ErrorCode::kInvalidArgument, "omega", "omega values must be multiples of 0.1 in [0, 1]");
    }
  }
  if (s_params_fractions.front() < 0.0 || s_params_fractions.back() > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "s_params_fractions", "fractions must lie in [0, 1]");
  }
}

json to_json(const SearchSpace& s) {
  return json{{"B", s.B},
              {"b_a", s.b_a},
              {"b_e", s.b_e},
              {"omega", s.omega},
              {"expert_slots", s.expert_slots},
              {"s_params_fractions", s.s_params_fractions}};
}

SearchSpace search_space_from_json(const json& doc) {
  SearchSpace s = SearchSpace::defaults();
  if (doc.is_null()) return s;
  if (!doc.is_object()) {
    throw Error(ErrorCode::kSchemaError, "search_space", "search_space must be an object");
  }
  auto take = [&](const char* key, auto& dst) {
    if (auto it = doc.find(key); it != doc.end()) {
      if (!it->is_array()) {
        throw Error(ErrorCode::kSchemaError, key, std::string("search_space.") + key + " must be an array");
      }
      dst = it->get<std::decay_t<decltype(dst)>>();
    }
  };
  take("B", s.B);
  take("b_a", s.b_a);
  take("b_e", s.b_e);
  take("omega", s.omega);
  take("expert_slots", s.expert_slots);
  take("s_params_fractions", s.s_params_fractions);
  s.validate();
  return s;
}

bool plan_less(const BatchingPlan& a, const BatchingPlan& b) {
  return std::tie(a.B, a.b_a, a.b_e, a.omega, a.s_expert, a.s_params) <
         std::tie(b.B, b.b_a, b.b_e, b.omega, b.s_expert, b.s_params);
}

double tokens_per_forward(const WorkloadSpec& w, const BatchingPlan& plan, Phase phase) {
  return static_cast<double>(plan.B * w.with_phase(phase).tokens_in_flight());
}

PlanEvaluation evaluate_plan(const ModelSpec& model, const HardwareProfile& hw,
                             const std::vector<LatencyTable>& tables, const WorkloadSpec& workload,
                             const BatchingPlan& plan, Phase phase) {
  const WorkloadSpec w = workload.with_phase(phase);
  PlanEvaluation e;
  e.plan = plan;
  e.phase = phase;
  e.footprint = check_constraints(model, hw, w, plan);
  try {
    validate_plan(model, plan);
  } catch (const Error& err) {
    e.reason = err.what();
    return e;
  }
  if (!e.footprint.host_feasible) {
    e.reason = "host memory exceeded";
    return e;
  }
  if (!e.footprint.gpu_feasible) {
    e.reason = "GPU memory exceeded";
    return e;
  }
  try {
    e.t_forward = critical_path(build_forward_dag(model, hw, tables, w, plan, phase));
  } catch (const Error& err) {
    if (err.code() != ErrorCode::kInfeasiblePlan) throw;
    e.reason = err.what();
    return e;
  }
  e.feasible = true;
  e.throughput = tokens_per_forward(w, plan, phase) / e.t_forward;
  return e;
}

double resource_lower_bound(const ModelSpec& model, const HardwareProfile& hw,
                            const std::vector<LatencyTable>& tables, const WorkloadSpec& workload,
                            const BatchingPlan& plan, Phase phase) {
  const WorkloadSpec w = workload.with_phase(phase);
  const NodeCosts costs(model, hw, tables, w, plan);
  const std::int64_t t = w.tokens_in_flight();
  const std::int64_t gpu = plan.gpu_sequences();
  const std::int64_t cpu = plan.cpu_sequences();
  const double L = static_cast<double>(model.num_layers);
  auto chunked = [&](std::int64_t tokens, bool shared) {
    auto one = [&](std::int64_t n) { return shared ? costs.shared_expert(n) : costs.expert(n); };
    double d = 0.0;
    if (tokens >= plan.b_e) d += static_cast<double>(tokens / plan.b_e) * one(plan.b_e);
    if (tokens % plan.b_e > 0) d += one(tokens % plan.b_e);
    return d;
  };

  // GPU work before the attention barrier, split into the CPU share's
  // pre-attention and the GPU micro-batches.
  const double cpu_pre = cpu > 0 ? costs.pre_attention(cpu) : 0.0;
  double gpu_attention = 0.0;
  double kv_chain = 0.0;  // KV-in and attention alternate through one KV buffer
  if (gpu > 0) {
    const std::int64_t full = gpu / plan.b_a;
    const std::int64_t rem = gpu % plan.b_a;
    if (full > 0) {
      gpu_attention += static_cast<double>(full) * (costs.pre_attention(plan.b_a) + costs.attn_gpu(plan.b_a));
      if (phase == Phase::kDecode) {
        kv_chain += static_cast<double>(full) *
                    (costs.htod(costs.kv_in_bytes(plan.b_a)) + costs.attn_gpu(plan.b_a));
      }
    }
    if (rem > 0) {
      gpu_attention += costs.pre_attention(rem) + costs.attn_gpu(rem);
      if (phase == Phase::kDecode) kv_chain += costs.htod(costs.kv_in_bytes(rem)) + costs.attn_gpu(rem);
    }
  }
  const double head = costs.post_attention() + costs.router();
  double experts = 0.0;
  if (model.shared_expert_bytes > 0) experts += chunked(plan.B * t, true);
  const std::int64_t routed = plan.B * t * model.top_k;
  const std::int64_t q = routed / model.experts_per_layer;
  const std::int64_t r = routed % model.experts_per_layer;
  experts += static_cast<double>(r) * chunked(q + 1, false);
  experts += static_cast<double>(model.experts_per_layer - r) * chunked(q, false);
  const double tail = head + experts;

  const double cpu_attn = cpu > 0 ? costs.attn_cpu(cpu) : 0.0;
  const double gpu_total = L * (cpu_pre + gpu_attention + tail);

  // Every layer passes its boundary, then either the CPU share or the GPU
  // stream, then the barrier and the sparse layer. With every expert routed
  // some tokens, copy k >= slots of a layer waits on the compute of copy
  // k - slots and so on that layer's router.
  const CacheLayout cache = cache_layout(model, plan.s_params);
  const std::int64_t slots = plan.s_expert / model.expert_bytes;
  const double front = std::max(cpu_pre + cpu_attn, cpu_pre + gpu_attention);
  double layered = 0.0;
  for (const auto& cached : cache.expert_cached) {
    double fetch = 0.0;
    if (slots > 0 && q >= 1) {
      const auto uncached = static_cast<std::int64_t>(std::count(cached.begin(), cached.end(), false));
      if (uncached > slots) {
        fetch = static_cast<double>(uncached - slots) * costs.htod(model.expert_bytes) + chunked(q, false);
      }
    }
    layered += front + head + std::max(experts, fetch);
  }
  const Bytes weights = model.model_bytes() - cache.cached_bytes();
  double htod = costs.htod(weights);
  if (phase == Phase::kDecode && gpu > 0) htod += L * costs.htod(costs.kv_in_bytes(gpu));
  const double dtoh = L * costs.dtoh(costs.kv_out_bytes(plan.B));

  // Under the default order the link runs each layer's dense copy, then its
  // KV-ins, then its experts. KV-in i + 1 also waits for attention i, so one
  // path follows the link and detours through every attention but a layer's
  // last. It ends with the last layer's final attention and sparse layer, or
  // with the link itself.
  double link_path = htod;
  double drain = 0.0;
  if (phase == Phase::kDecode && gpu > 0 && !cache.expert_cached.empty()) {
    const std::int64_t full = gpu / plan.b_a;
    const std::int64_t rem = gpu % plan.b_a;
    const std::int64_t last_mb = rem > 0 ? rem : plan.b_a;
    double attn = static_cast<double>(full) * costs.attn_gpu(plan.b_a);
    if (rem > 0) attn += costs.attn_gpu(rem);
    const double detours = L * (attn - costs.attn_gpu(last_mb));
    link_path = htod + detours;
    const auto& last = cache.expert_cached.back();
    const auto uncached = static_cast<double>(std::count(last.begin(), last.end(), false));
    drain = htod - uncached * costs.htod(model.expert_bytes) + detours + costs.attn_gpu(last_mb) + tail;
  }

  return std::max({gpu_total, layered, L * cpu_attn, L * kv_chain, link_path, dtoh, drain});
}

namespace {

bool cpu_attention_possible(const HardwareProfile& hw, const std::vector<LatencyTable>* tables) {
  if (hw.cpu_attention_available()) return true;
  return tables != nullptr && has_table(*tables, ModuleKind::kAttentionMechanismCpu);
}

struct Enumerator {
  const ModelSpec& model;
  const HardwareProfile& hw;
  WorkloadSpec w;
  Phase phase;
  Enumeration out;

  void skip(const char* why, std::int64_t n = 1) { out.skipped[why] += n; }

  // Adds one plan per s_params fraction on top of a feasible base plan.
  void expand(BatchingPlan base, const std::vector<double>& fractions) {
    const MemoryFootprint fp = check_constraints(model, hw, w, base);
    if (!fp.feasible()) {
      skip(fp.host_feasible ? "gpu_memory" : "host_memory", static_cast<std::int64_t>(fractions.size()));
      return;
    }
    const Bytes spare = hw.m_g - fp.gpu_total;
    Bytes last = -1;
    for (double f : fractions) {
      BatchingPlan p = base;
      p.s_params = std::min(model.model_bytes(),
                            static_cast<Bytes>(std::floor(f * static_cast<double>(spare))));
      if (p.s_params == last) {
        skip("duplicate_s_params");
        continue;
      }
      last = p.s_params;
      ++out.combinations;
      if (!check_constraints(model, hw, w, p).feasible()) {
        skip("gpu_memory");
        continue;
      }
      out.plans.push_back(p);
    }
  }
};

bool b_a_fits(const BatchingPlan& p) {
  const std::int64_t g = p.gpu_sequences();
  return g == 0 ? p.b_a == 1 : p.b_a <= g;
}

}  // namespace

Enumeration enumerate_candidates(const ModelSpec& model, const HardwareProfile& hw,
                                 const WorkloadSpec& workload, const SearchSpace& space, Phase phase) {
  space.validate();
  const WorkloadSpec w = workload.with_phase(phase);
  validate_workload(w);
  if (hw.m_c - model.model_bytes() < kv_bytes_per_sequence(model, w)) {
    throw Error(ErrorCode::kNoFeasibleB, "m_c",
                "host memory cannot hold the model plus one sequence's KV-cache");
  }
  Enumerator en{model, hw, w, phase, {}};
  const bool cpu_ok = cpu_attention_possible(hw, nullptr);
  const auto nfrac = static_cast<std::int64_t>(space.s_params_fractions.size());

  for (std::int64_t b_a : space.b_a) {
    for (std::int64_t b_e : space.b_e) {
      for (double omega : space.omega) {
        for (std::int64_t slots : space.expert_slots) {
          BatchingPlan base{1, b_a, b_e, omega, slots * model.expert_bytes, 0};
          if (omega > 0.0 && !cpu_ok) {
            en.skip("cpu_unavailable", nfrac);
            continue;
          }
          std::int64_t bmax = 0;
          try {
            bmax = max_feasible_B(model, hw, w, base);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kNoFeasibleB) throw;
            en.skip("no_feasible_B", nfrac);
            continue;
          }
          if (phase == Phase::kDecode) {
            base.B = bmax;
            if (!b_a_fits(base)) {
              en.skip("b_a_exceeds_gpu_share", nfrac);
              continue;
            }
            en.expand(base, space.s_params_fractions);
          } else {
            for (std::int64_t B : space.B) {
              if (B > bmax) {
                en.skip("B_exceeds_capacity", nfrac);
                continue;
              }
              base.B = B;
              if (!b_a_fits(base)) {
                en.skip("b_a_exceeds_gpu_share", nfrac);
                continue;
              }
              en.expand(base, space.s_params_fractions);
            }
          }
        }
      }
    }
  }
  if (en.out.plans.empty()) {
    throw Error(ErrorCode::kEmptySearchSpace, "search_space", "no feasible candidate plan");
  }
  return std::move(en.out);
}

PlanEvaluation best_of(const ModelSpec& model, const HardwareProfile& hw,
                       const std::vector<LatencyTable>& tables, const WorkloadSpec& workload,
                       const std::vector<BatchingPlan>& plans, Phase phase, SearchStats* stats) {
  if (plans.empty()) {
    throw Error(ErrorCode::kEmptySearchSpace, "search_space", "no feasible candidate plan");
  }
  const WorkloadSpec w = workload.with_phase(phase);
  std::vector<double> upper(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const double lb = resource_lower_bound(model, hw, tables, w, plans[i], phase);
    upper[i] = lb > 0.0 ? tokens_per_forward(w, plans[i], phase) / lb
                        : std::numeric_limits<double>::infinity();
  }
  std::vector<std::size_t> idx(plans.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (upper[a] != upper[b]) return upper[a] > upper[b];
    return plan_less(plans[a], plans[b]);
  });

  PlanEvaluation best;
  bool have = false;
  std::int64_t evaluated = 0;
  for (std::size_t i : idx) {
    // The bound is a sum of the same terms the DP adds; the slack absorbs
    // floating-point reassociation.
    if (have && upper[i] * (1.0 + 1e-9) < best.throughput) break;
    PlanEvaluation e = evaluate_plan(model, hw, tables, w, plans[i], phase);
    ++evaluated;
    if (!e.feasible) continue;
    if (!have || e.throughput > best.throughput ||
        (e.throughput == best.throughput && plan_less(e.plan, best.plan))) {
      best = std::move(e);
      have = true;
    }
  }
  if (stats != nullptr) {
    stats->candidates = static_cast<std::int64_t>(plans.size());
    stats->evaluated = evaluated;
  }
  if (!have) throw Error(ErrorCode::kEmptySearchSpace, "search_space", "no feasible candidate plan");
  return best;
}

PlanEvaluation search(const ModelSpec& model, const HardwareProfile& hw,
                      const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                      const SearchSpace& space, Phase phase, SearchStats* stats) {
  Enumeration en = enumerate_candidates(model, hw, w, space, phase);
  if (!cpu_attention_possible(hw, &tables)) {
    std::erase_if(en.plans, [](const BatchingPlan& p) { return p.cpu_sequences() > 0; });
  }
  return best_of(model, hw, tables, w, en.plans, phase, stats);
}

PlanEvaluation model_based_baseline(const ModelSpec& model, const HardwareProfile& hw,
                                    const std::vector<LatencyTable>& tables,
                                    const WorkloadSpec& workload, Phase phase,
                                    const SearchSpace& space, SearchStats* stats) {
  space.validate();
  const WorkloadSpec w = workload.with_phase(phase);
  validate_workload(w);
  Enumerator en{model, hw, w, phase, {}};
  for (std::int64_t B : space.B) {
    for (std::int64_t b_e : space.b_e) {
      for (std::int64_t slots : space.expert_slots) {
        const BatchingPlan base{B, B, b_e, 0.0, slots * model.expert_bytes, 0};
        const bool both = check_constraints(model, hw, workload.with_phase(Phase::kPrefill), base).feasible() &&
                          check_constraints(model, hw, workload.with_phase(Phase::kDecode), base).feasible();
        if (!both) {
          en.skip("unified_batch_infeasible");
          continue;
        }
        en.expand(base, space.s_params_fractions);
      }
    }
  }
  return best_of(model, hw, tables, w, en.out.plans, phase, stats);
}

}  // namespace moeplan
