// SPDX-License-Identifier: Apache-2.0
#include "moeplan/sim.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>

#include "moeplan/error.hpp"
#include "moeplan/search.hpp"

namespace moeplan {

using nlohmann::json;

std::string_view routing_mode_name(RoutingModel::Mode m) {
  return m == RoutingModel::Mode::kEven ? "even" : "sampled";
}

RoutingModel::Mode parse_routing_mode(std::string_view text) {
  if (text == "even") return RoutingModel::Mode::kEven;
  if (text == "sampled") return RoutingModel::Mode::kSampled;
  throw Error(ErrorCode::kSchemaError, "routing",
              "routing mode must be 'even' or 'sampled', got '" + std::string(text) + "'");
}

std::vector<std::int64_t> sample_routing(const ModelSpec& model, std::int64_t tokens,
                                         const RoutingModel& routing, int layer_index) {
  if (tokens < 1) throw Error(ErrorCode::kInvalidArgument, "B", "routing needs at least one token");
  const std::int64_t total = tokens * model.top_k;
  const std::int64_t E = model.experts_per_layer;
  if (routing.mode == RoutingModel::Mode::kEven) return even_split(total, E);
  if (!(routing.concentration > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "concentration", "concentration must be > 0");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(routing.seed & 0xffffffffu),
                    static_cast<std::uint32_t>(routing.seed >> 32),
                    static_cast<std::uint32_t>(layer_index)};
  std::mt19937_64 rng(seq);
  std::gamma_distribution<double> gamma(routing.concentration, 1.0);
  std::vector<double> weight(static_cast<std::size_t>(E));
  double sum = 0.0;
  for (double& x : weight) {
    x = gamma(rng);
    sum += x;
  }
  std::vector<std::int64_t> counts(static_cast<std::size_t>(E), 0);
  std::int64_t left = total;
  double mass = sum;
  for (std::size_t e = 0; e + 1 < counts.size() && left > 0; ++e) {
    const double p = mass > 0.0 ? std::clamp(weight[e] / mass, 0.0, 1.0) : 0.0;
    std::binomial_distribution<std::int64_t> draw(left, p);
    counts[e] = draw(rng);
    left -= counts[e];
    mass -= weight[e];
  }
  counts.back() += left;
  return counts;
}

namespace {

json resource_map(const std::array<double, kNumResources>& v) {
  json o = json::object();
  for (std::size_t r = 0; r < kNumResources; ++r) {
    o[std::string(resource_name(static_cast<Resource>(r)))] = v[r];
  }
  return o;
}

}  // namespace

json to_json(const SimReport& r) {
  return json{{"makespan", r.makespan},
              {"busy", resource_map(r.busy)},
              {"idle_fraction", resource_map(r.idle_fraction)},
              {"bytes_htod", r.bytes_htod},
              {"bytes_dtoh", r.bytes_dtoh},
              {"peak_gpu_bytes", r.peak_gpu_bytes},
              {"expert_tokens", r.expert_tokens},
              {"mean_expert_batch", r.mean_expert_batch},
              {"gpu_flops_utilization", r.gpu_flops_utilization},
              {"throughput", r.throughput},
              {"oom", r.oom},
              {"jobs", r.jobs}};
}

namespace {

struct Finish {
  double time;
  std::int64_t seq;
  int node;
  bool operator>(const Finish& o) const { return time != o.time ? time > o.time : seq > o.seq; }
};

double node_flops(const ModelSpec& m, const WorkloadSpec& w, const DagNode& n) {
  const double tok = static_cast<double>(n.tokens);
  const double ctx = static_cast<double>(w.context_len());
  switch (n.kind) {
    case NodeKind::kPreAttention: return module_flops(m, ModuleKind::kPreAttention, tok, 0.0);
    case NodeKind::kAttnMechGpu: return module_flops(m, ModuleKind::kAttentionMechanismGpu, tok, ctx);
    case NodeKind::kPostAttention: return module_flops(m, ModuleKind::kPostAttention, tok, 0.0);
    case NodeKind::kRouter: return module_flops(m, ModuleKind::kRouter, tok, 0.0);
    case NodeKind::kExpertCompute: {
      const double f = module_flops(m, ModuleKind::kExpert, tok, 0.0);
      if (n.expert != kSharedExpert) return f;
      return f * static_cast<double>(m.shared_expert_bytes) / static_cast<double>(m.expert_bytes);
    }
    default: return 0.0;
  }
}

}  // namespace

SimReport simulate_plan(const ModelSpec& model, const HardwareProfile& hw,
                        const std::vector<LatencyTable>& tables, const WorkloadSpec& workload,
                        const BatchingPlan& plan, const RoutingModel& routing, Phase phase,
                        std::vector<TraceEvent>* trace) {
  const WorkloadSpec w = workload.with_phase(phase);
  SimReport rep;
  const std::int64_t tokens = plan.B * w.tokens_in_flight();
  for (std::int64_t l = 0; l < model.num_layers; ++l) {
    rep.expert_tokens.push_back(sample_routing(model, tokens, routing, static_cast<int>(l)));
  }
  const Dag dag = build_forward_graph(model, hw, tables, w, plan, phase, &rep.expert_tokens);
  const auto streams = resource_order(dag, OrderPolicy{});
  const auto succ = dag.successors();
  const std::size_t n = dag.nodes.size();

  std::vector<int> waiting(n, 0);
  for (auto [a, b] : dag.edges) ++waiting[static_cast<std::size_t>(b)];
  std::array<std::size_t, kNumResources> head{};
  std::array<bool, kNumResources> busy{};
  std::priority_queue<Finish, std::vector<Finish>, std::greater<>> events;
  std::int64_t seq = 0;
  double now = 0.0;
  std::size_t done = 0;

  const MemoryFootprint fp = check_constraints(model, hw, w, plan);
  const Bytes resident = fp.s_params + fp.s_expert + fp.s_dense + fp.s_kv_gpu +
                         intermediate_breakdown(model, w, plan).hidden;
  rep.peak_gpu_bytes = resident;
  double total_flops = 0.0;

  auto record = [&](const DagNode& node, bool start) {
    if (trace != nullptr) trace->push_back({now, node.id, node.kind, node.resource, start});
  };
  std::vector<int> instant;  // synthetic nodes ready to complete
  auto complete = [&](int v) {
    ++done;
    for (int s : succ[static_cast<std::size_t>(v)]) {
      if (--waiting[static_cast<std::size_t>(s)] == 0 && dag.nodes[static_cast<std::size_t>(s)].synthetic()) {
        instant.push_back(s);
      }
    }
  };
  auto drain_instant = [&] {
    while (!instant.empty()) {
      const int v = instant.back();
      instant.pop_back();
      record(dag.nodes[static_cast<std::size_t>(v)], true);
      record(dag.nodes[static_cast<std::size_t>(v)], false);
      complete(v);
    }
  };
  auto dispatch = [&] {
    bool progress = true;
    while (progress) {
      progress = false;
      for (std::size_t r = 0; r < kNumResources; ++r) {
        if (busy[r] || head[r] >= streams[r].size()) continue;
        const int v = streams[r][head[r]];
        if (waiting[static_cast<std::size_t>(v)] != 0) continue;
        const DagNode& node = dag.nodes[static_cast<std::size_t>(v)];
        ++head[r];
        busy[r] = true;
        record(node, true);
        rep.busy[r] += node.duration;
        ++rep.jobs;
        if (node.resource == Resource::kHtoDLink) rep.bytes_htod += node.bytes;
        if (node.resource == Resource::kDtoHLink) rep.bytes_dtoh += node.bytes;
        if (node.resource == Resource::kGpuCompute) {
          rep.peak_gpu_bytes = std::max(rep.peak_gpu_bytes, resident + node.activation);
          total_flops += node_flops(model, w, node);
        }
        events.push({now + node.duration, seq++, v});
        progress = true;
      }
    }
  };

  if (waiting[static_cast<std::size_t>(dag.entry_id)] == 0) instant.push_back(dag.entry_id);
  drain_instant();
  dispatch();
  while (!events.empty()) {
    const Finish f = events.top();
    events.pop();
    now = f.time;
    const DagNode& node = dag.nodes[static_cast<std::size_t>(f.node)];
    busy[static_cast<std::size_t>(node.resource)] = false;
    record(node, false);
    complete(f.node);
    drain_instant();
    // Finish every job due at this instant before dispatching, so the start
    // order does not depend on heap tie-breaking among simultaneous events.
    if (!events.empty() && events.top().time == now) continue;
    dispatch();
  }
  if (done != n) {
    throw Error(ErrorCode::kCyclicGraph, "dag", "simulation stalled: stream order deadlocks the graph");
  }

  rep.makespan = now;
  for (std::size_t r = 0; r < kNumResources; ++r) {
    rep.idle_fraction[r] = rep.makespan > 0.0 ? 1.0 - rep.busy[r] / rep.makespan : 0.0;
  }
  std::int64_t routed = 0;
  for (const auto& layer : rep.expert_tokens) {
    for (std::int64_t c : layer) routed += c;
  }
  rep.mean_expert_batch = static_cast<double>(routed) / static_cast<double>(model.total_experts());
  rep.gpu_flops_utilization =
      rep.makespan > 0.0 ? total_flops / (rep.makespan * hw.gpu_peak_flops) : 0.0;
  rep.throughput = rep.makespan > 0.0 ? static_cast<double>(tokens) / rep.makespan : 0.0;
  rep.oom = rep.peak_gpu_bytes > hw.m_g;
  return rep;
}

double compare_with_estimate(const ModelSpec& model, const HardwareProfile& hw,
                             const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                             const BatchingPlan& plan, Phase phase) {
  const double dp = critical_path(build_forward_dag(model, hw, tables, w, plan, phase));
  const SimReport rep = simulate_plan(model, hw, tables, w, plan, RoutingModel{}, phase);
  return std::abs(rep.makespan - dp) / dp;
}

void write_trace(std::ostream& os, const std::vector<TraceEvent>& events) {
  for (const TraceEvent& e : events) {
    const json line{{"time", e.time},
                    {"node", e.node},
                    {"kind", node_kind_name(e.kind)},
                    {"resource", resource_name(e.resource)},
                    {"action", e.start ? "start" : "finish"}};
    os << line.dump() << '\n';
  }
}

}  // namespace moeplan
