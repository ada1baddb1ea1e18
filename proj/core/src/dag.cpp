// SPDX-License-Identifier: Apache-2.0
#include "moeplan/dag.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "moeplan/error.hpp"

namespace moeplan {

using nlohmann::json;

std::string_view resource_name(Resource r) {
  switch (r) {
    case Resource::kGpuCompute: return "GpuCompute";
    case Resource::kCpuCompute: return "CpuCompute";
    case Resource::kHtoDLink: return "HtoDLink";
    case Resource::kDtoHLink: return "DtoHLink";
  }
  return "unknown";
}

std::string_view node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::kEntry: return "Entry";
    case NodeKind::kExit: return "Exit";
    case NodeKind::kWeightCopy: return "WeightCopy";
    case NodeKind::kKvCopyIn: return "KvCopyIn";
    case NodeKind::kKvCopyOut: return "KvCopyOut";
    case NodeKind::kPreAttention: return "PreAttention";
    case NodeKind::kAttnMechGpu: return "AttnMechGpu";
    case NodeKind::kAttnMechCpu: return "AttnMechCpu";
    case NodeKind::kPostAttention: return "PostAttention";
    case NodeKind::kRouter: return "Router";
    case NodeKind::kExpertCompute: return "ExpertCompute";
  }
  return "unknown";
}

Resource resource_of(NodeKind k) {
  switch (k) {
    case NodeKind::kWeightCopy:
    case NodeKind::kKvCopyIn: return Resource::kHtoDLink;
    case NodeKind::kKvCopyOut: return Resource::kDtoHLink;
    case NodeKind::kAttnMechCpu: return Resource::kCpuCompute;
    default: return Resource::kGpuCompute;
  }
}

std::string DagNode::label() const {
  std::string out(node_kind_name(kind));
  if (layer >= 0) out += " L" + std::to_string(layer);
  if (kind == NodeKind::kExpertCompute || (kind == NodeKind::kWeightCopy && expert >= 0)) {
    out += expert == kSharedExpert ? std::string(" shared") : " e" + std::to_string(expert);
  }
  if (chunk >= 0) out += " c" + std::to_string(chunk);
  switch (kind) {
    case NodeKind::kPreAttention:
    case NodeKind::kKvCopyIn:
    case NodeKind::kKvCopyOut:
    case NodeKind::kAttnMechGpu:
    case NodeKind::kAttnMechCpu:
      out += micro_batch < 0 ? std::string(" cpu") : " mb" + std::to_string(micro_batch);
      break;
    default: break;
  }
  return out;
}

std::vector<std::vector<int>> Dag::predecessors() const {
  std::vector<std::vector<int>> p(nodes.size());
  for (auto [a, b] : edges) p[static_cast<std::size_t>(b)].push_back(a);
  return p;
}

std::vector<std::vector<int>> Dag::successors() const {
  std::vector<std::vector<int>> s(nodes.size());
  for (auto [a, b] : edges) s[static_cast<std::size_t>(a)].push_back(b);
  return s;
}

namespace {

Adjacency compress(std::size_t n, const std::vector<std::pair<int, int>>& edges, bool outgoing) {
  Adjacency adj;
  adj.offset.assign(n + 1, 0);
  for (auto [a, b] : edges) ++adj.offset[static_cast<std::size_t>(outgoing ? a : b) + 1];
  for (std::size_t v = 0; v < n; ++v) adj.offset[v + 1] += adj.offset[v];
  adj.index.resize(edges.size());
  std::vector<std::size_t> fill(adj.offset.begin(), adj.offset.end() - 1);
  for (auto [a, b] : edges) {
    const int key = outgoing ? a : b;
    adj.index[fill[static_cast<std::size_t>(key)]++] = outgoing ? b : a;
  }
  return adj;
}

}  // namespace

Adjacency out_adjacency(const Dag& dag) { return compress(dag.nodes.size(), dag.edges, true); }
Adjacency in_adjacency(const Dag& dag) { return compress(dag.nodes.size(), dag.edges, false); }

std::vector<std::int64_t> even_split(std::int64_t tokens, std::int64_t experts) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(experts), tokens / experts);
  const std::int64_t rem = tokens % experts;
  for (std::int64_t e = 0; e < rem; ++e) ++out[static_cast<std::size_t>(e)];
  return out;
}

ExpertCounts even_expert_counts(const ModelSpec& m, const WorkloadSpec& w, const BatchingPlan& p) {
  const std::int64_t routed = p.B * w.tokens_in_flight() * m.top_k;
  return ExpertCounts(static_cast<std::size_t>(m.num_layers), even_split(routed, m.experts_per_layer));
}

NodeCosts::NodeCosts(const ModelSpec& model, const HardwareProfile& hw,
                     const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                     const BatchingPlan& plan)
    : model_(model),
      hw_(hw),
      tables_(tables),
      w_(w),
      plan_(plan),
      table_phase_(w.phase == Phase::kPrefill ? TablePhase::kPrefill : TablePhase::kDecode) {}

double NodeCosts::pre_attention(std::int64_t seqs) const {
  return latency_lookup(tables_, ModuleKind::kPreAttention,
                        static_cast<double>(seqs * w_.tokens_in_flight()), 0.0);
}

double NodeCosts::attn_gpu(std::int64_t seqs) const {
  return latency_lookup(tables_, ModuleKind::kAttentionMechanismGpu,
                        static_cast<double>(seqs * w_.tokens_in_flight()),
                        static_cast<double>(w_.context_len()), table_phase_);
}

double NodeCosts::attn_cpu(std::int64_t seqs) const {
  const double tokens = static_cast<double>(seqs * w_.tokens_in_flight());
  const double ctx = static_cast<double>(w_.context_len());
  if (has_table(tables_, ModuleKind::kAttentionMechanismCpu)) {
    return latency_lookup(tables_, ModuleKind::kAttentionMechanismCpu, tokens, ctx, table_phase_);
  }
  if (!hw_.cpu_attention_available()) {
    throw Error(ErrorCode::kInfeasiblePlan, "omega",
                "plan routes attention to the CPU but CPU attention is unavailable");
  }
  return module_flops(model_, ModuleKind::kAttentionMechanismCpu, tokens, ctx) *
         model_.kv_upproject_factor / hw_.cpu_attn_flops;
}

double NodeCosts::post_attention() const {
  return latency_lookup(tables_, ModuleKind::kPostAttention,
                        static_cast<double>(plan_.B * w_.tokens_in_flight()), 0.0);
}

double NodeCosts::router() const {
  return latency_lookup(tables_, ModuleKind::kRouter,
                        static_cast<double>(plan_.B * w_.tokens_in_flight()), 0.0);
}

double NodeCosts::expert(std::int64_t tokens) const {
  return latency_lookup(tables_, ModuleKind::kExpert, static_cast<double>(tokens), 0.0);
}

double NodeCosts::shared_expert(std::int64_t tokens) const {
  return expert(tokens) * static_cast<double>(model_.shared_expert_bytes) /
         static_cast<double>(model_.expert_bytes);
}

Bytes NodeCosts::kv_in_bytes(std::int64_t seqs) const {
  return seqs * w_.context_len() * model_.kv_bytes_per_token_layer;
}

Bytes NodeCosts::kv_out_bytes(std::int64_t seqs) const {
  return seqs * w_.tokens_in_flight() * model_.kv_bytes_per_token_layer;
}

Bytes NodeCosts::attn_activation(std::int64_t seqs) const {
  return attention_activation_bytes(model_, w_, seqs);
}

Bytes NodeCosts::expert_activation(std::int64_t tokens) const {
  return tokens * model_.expert_activation_bytes_per_token;
}

namespace {

class Builder {
 public:
  int add(NodeKind kind, double duration, int layer) {
    DagNode n;
    n.id = static_cast<int>(dag_.nodes.size());
    n.kind = kind;
    n.resource = resource_of(kind);
    n.duration = duration;
    n.layer = layer;
    dag_.nodes.push_back(n);
    return n.id;
  }
  DagNode& node(int id) { return dag_.nodes[static_cast<std::size_t>(id)]; }
  void edge(int from, int to) { dag_.edges.emplace_back(from, to); }
  Dag& dag() { return dag_; }

 private:
  Dag dag_;
};

Dag build_graph(const ModelSpec& model, const HardwareProfile& hw,
                const std::vector<LatencyTable>& tables, const WorkloadSpec& workload,
                const BatchingPlan& plan, Phase phase, const ExpertCounts* counts_override,
                std::int64_t layers) {
  const WorkloadSpec w = workload.with_phase(phase);
  validate_workload(w);
  validate_plan(model, plan);
  const NodeCosts costs(model, hw, tables, w, plan);
  const CacheLayout cache = cache_layout(model, plan.s_params);

  ExpertCounts even;
  if (counts_override == nullptr) even = even_expert_counts(model, w, plan);
  const ExpertCounts& counts = counts_override != nullptr ? *counts_override : even;
  if (static_cast<std::int64_t>(counts.size()) < layers) {
    throw Error(ErrorCode::kInvalidArgument, "expert_counts", "expert counts missing for some layers");
  }
  for (std::int64_t l = 0; l < layers; ++l) {
    if (static_cast<std::int64_t>(counts[static_cast<std::size_t>(l)].size()) != model.experts_per_layer) {
      throw Error(ErrorCode::kInvalidArgument, "expert_counts",
                  "expert counts must list every expert of every layer");
    }
  }

  const bool decode = phase == Phase::kDecode;
  const std::int64_t t = w.tokens_in_flight();
  const std::int64_t gpu = plan.gpu_sequences();
  const std::int64_t cpu = plan.cpu_sequences();
  const std::int64_t mbs = plan.gpu_micro_batches();
  const std::int64_t slots = plan.s_expert / model.expert_bytes;

  Builder b;
  const int entry = b.add(NodeKind::kEntry, 0.0, -1);
  int boundary = entry;
  int prev_attn_gpu = -1;
  std::vector<int> prev_dense_users;
  std::vector<int> copy_last_user;  // per uncached expert copy, forward order

  for (std::int64_t li = 0; li < layers; ++li) {
    const int l = static_cast<int>(li);
    const int layer_entry = boundary;

    int dense_wc = -1;
    const Bytes dense_bytes = model.dense_bytes_per_layer() - cache.dense_cached[static_cast<std::size_t>(l)];
    if (dense_bytes > 0) {
      dense_wc = b.add(NodeKind::kWeightCopy, costs.htod(dense_bytes), l);
      b.node(dense_wc).bytes = dense_bytes;
      b.edge(entry, dense_wc);
      for (int u : prev_dense_users) b.edge(u, dense_wc);
    }
    auto pre_attention = [&](std::int64_t seqs, int mb) {
      const int v = b.add(NodeKind::kPreAttention, costs.pre_attention(seqs), l);
      b.node(v).micro_batch = mb;
      b.node(v).tokens = seqs * t;
      b.edge(layer_entry, v);
      if (dense_wc >= 0) b.edge(dense_wc, v);
      return v;
    };
    auto kv_out = [&](int pre, std::int64_t seqs, int mb) {
      const Bytes bytes = costs.kv_out_bytes(seqs);
      const int v = b.add(NodeKind::kKvCopyOut, costs.dtoh(bytes), l);
      b.node(v).micro_batch = mb;
      b.node(v).bytes = bytes;
      b.edge(pre, v);
    };

    std::vector<int> attention;
    if (cpu > 0) {
      const int pre = pre_attention(cpu, -1);
      const int a = b.add(NodeKind::kAttnMechCpu, costs.attn_cpu(cpu), l);
      b.node(a).tokens = cpu * t;
      b.edge(pre, a);
      attention.push_back(a);
      kv_out(pre, cpu, -1);
    }
    for (std::int64_t i = 0; i < mbs; ++i) {
      const int mb = static_cast<int>(i);
      const std::int64_t size = std::min(plan.b_a, gpu - i * plan.b_a);
      const int pre = pre_attention(size, mb);
      int kv_in = -1;
      if (decode) {
        const Bytes bytes = costs.kv_in_bytes(size);
        kv_in = b.add(NodeKind::kKvCopyIn, costs.htod(bytes), l);
        b.node(kv_in).micro_batch = mb;
        b.node(kv_in).bytes = bytes;
        b.edge(entry, kv_in);
        if (prev_attn_gpu >= 0) b.edge(prev_attn_gpu, kv_in);
      }
      const int a = b.add(NodeKind::kAttnMechGpu, costs.attn_gpu(size), l);
      b.node(a).micro_batch = mb;
      b.node(a).tokens = size * t;
      b.node(a).activation = costs.attn_activation(size);
      b.edge(pre, a);
      if (kv_in >= 0) b.edge(kv_in, a);
      prev_attn_gpu = a;
      attention.push_back(a);
      kv_out(pre, size, mb);
    }

    const int post = b.add(NodeKind::kPostAttention, costs.post_attention(), l);
    b.node(post).tokens = plan.B * t;
    for (int a : attention) b.edge(a, post);
    const int router = b.add(NodeKind::kRouter, costs.router(), l);
    b.node(router).tokens = plan.B * t;
    b.edge(post, router);

    std::vector<int> sinks;
    std::vector<int> dense_users = {post};
    auto chunks = [&](std::int64_t tokens, int expert, int wc) {
      int last = -1;
      int j = 0;
      for (std::int64_t done = 0; done < tokens; done += plan.b_e, ++j) {
        const std::int64_t n = std::min(plan.b_e, tokens - done);
        const double d = expert == kSharedExpert ? costs.shared_expert(n) : costs.expert(n);
        const int v = b.add(NodeKind::kExpertCompute, d, l);
        b.node(v).expert = expert;
        b.node(v).chunk = j;
        b.node(v).tokens = n;
        b.node(v).activation = costs.expert_activation(n);
        b.edge(router, v);
        if (wc >= 0) b.edge(wc, v);
        sinks.push_back(v);
        last = v;
      }
      return last;
    };
    if (model.shared_expert_bytes > 0) {
      const std::size_t before = sinks.size();
      chunks(plan.B * t, kSharedExpert, -1);
      dense_users.insert(dense_users.end(), sinks.begin() + static_cast<std::ptrdiff_t>(before), sinks.end());
    }
    for (std::int64_t ei = 0; ei < model.experts_per_layer; ++ei) {
      const int e = static_cast<int>(ei);
      int wc = -1;
      if (!cache.expert_cached[static_cast<std::size_t>(l)][static_cast<std::size_t>(e)]) {
        wc = b.add(NodeKind::kWeightCopy, costs.htod(model.expert_bytes), l);
        b.node(wc).expert = e;
        b.node(wc).bytes = model.expert_bytes;
        b.edge(entry, wc);
        const std::size_t m = copy_last_user.size();
        if (slots > 0 && m >= static_cast<std::size_t>(slots)) {
          b.edge(copy_last_user[m - static_cast<std::size_t>(slots)], wc);
        }
        copy_last_user.push_back(wc);
      }
      const int last = chunks(counts[static_cast<std::size_t>(l)][static_cast<std::size_t>(e)], e, wc);
      if (wc >= 0 && last >= 0) copy_last_user.back() = last;
    }
    if (sinks.empty()) sinks.push_back(router);
    prev_dense_users = std::move(dense_users);

    boundary = b.add(NodeKind::kExit, 0.0, l);
    for (int s : sinks) b.edge(s, boundary);
  }

  Dag& dag = b.dag();
  dag.entry_id = entry;
  dag.exit_id = boundary;
  std::vector<char> has_succ(dag.nodes.size(), 0);
  for (auto [a, c] : dag.edges) has_succ[static_cast<std::size_t>(a)] = 1;
  for (const DagNode& n : dag.nodes) {
    if (n.id != dag.exit_id && !has_succ[static_cast<std::size_t>(n.id)]) b.edge(n.id, dag.exit_id);
  }
  return std::move(b.dag());
}

}  // namespace

Dag build_layer_dag(const ModelSpec& model, const HardwareProfile& hw,
                    const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                    const BatchingPlan& plan, Phase phase) {
  return build_graph(model, hw, tables, w, plan, phase, nullptr, 1);
}

Dag build_forward_graph(const ModelSpec& model, const HardwareProfile& hw,
                        const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                        const BatchingPlan& plan, Phase phase, const ExpertCounts* counts) {
  return build_graph(model, hw, tables, w, plan, phase, counts, model.num_layers);
}

Dag build_forward_dag(const ModelSpec& model, const HardwareProfile& hw,
                      const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                      const BatchingPlan& plan, Phase phase) {
  return serialize_resources(build_forward_graph(model, hw, tables, w, plan, phase));
}

std::array<std::vector<int>, kNumResources> resource_order(const Dag& dag, const OrderPolicy& policy) {
  std::array<std::vector<int>, kNumResources> order;
  for (const DagNode& n : dag.nodes) {
    if (!n.synthetic()) order[static_cast<std::size_t>(n.resource)].push_back(n.id);
  }
  auto htod_class = [&](const DagNode& n) {
    if (n.kind == NodeKind::kWeightCopy && n.expert < 0) return 0;
    const bool kv = n.kind == NodeKind::kKvCopyIn;
    if (policy.htod == OrderPolicy::HtoD::kDenseKvExperts) return kv ? 1 : 2;
    return kv ? 2 : 1;
  };
  auto& htod = order[static_cast<std::size_t>(Resource::kHtoDLink)];
  std::stable_sort(htod.begin(), htod.end(), [&](int a, int b) {
    const DagNode& na = dag.nodes[static_cast<std::size_t>(a)];
    const DagNode& nb = dag.nodes[static_cast<std::size_t>(b)];
    if (na.layer != nb.layer) return na.layer < nb.layer;
    return htod_class(na) < htod_class(nb);
  });
  return order;
}

std::vector<int> topological_order(const Dag& dag) {
  const std::size_t n = dag.nodes.size();
  const Adjacency succ = out_adjacency(dag);
  std::vector<int> indeg(n, 0);
  for (auto [a, b] : dag.edges) ++indeg[static_cast<std::size_t>(b)];
  std::vector<int> order;
  order.reserve(n);
  for (std::size_t v = 0; v < n; ++v) {
    if (indeg[v] == 0) order.push_back(static_cast<int>(v));
  }
  for (std::size_t head = 0; head < order.size(); ++head) {
    const int v = order[head];
    for (std::size_t k = succ.begin(v); k < succ.end(v); ++k) {
      const int s = succ.index[k];
      if (--indeg[static_cast<std::size_t>(s)] == 0) order.push_back(s);
    }
  }
  if (order.size() != n) {
    throw Error(ErrorCode::kCyclicGraph, "dag", "graph contains a cycle");
  }
  return order;
}

Dag serialize_resources(const Dag& dag, const OrderPolicy& policy) {
  Dag out = dag;
  const Adjacency preds = in_adjacency(dag);
  for (const auto& chain : resource_order(dag, policy)) {
    for (std::size_t i = 1; i < chain.size(); ++i) {
      const int a = chain[i - 1];
      const int b = chain[i];
      const auto first = preds.index.begin() + static_cast<std::ptrdiff_t>(preds.begin(b));
      const auto last = preds.index.begin() + static_cast<std::ptrdiff_t>(preds.end(b));
      if (std::find(first, last, a) == last) out.edges.emplace_back(a, b);
    }
  }
  try {
    topological_order(out);
  } catch (const Error&) {
    throw Error(ErrorCode::kCycleIntroduced, "order_policy",
                "resource serialization contradicts a data dependency");
  }
  return out;
}

namespace {

const char* dot_shape(const DagNode& n) {
  if (n.synthetic()) return "circle";
  switch (n.resource) {
    case Resource::kGpuCompute: return "box";
    case Resource::kCpuCompute: return "ellipse";
    case Resource::kHtoDLink: return "parallelogram";
    case Resource::kDtoHLink: return "invtrapezium";
  }
  return "box";
}

std::string format_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g s", s);
  return buf;
}

}  // namespace

std::string export_dot(const Dag& dag) {
  std::ostringstream os;
  os << "digraph moeplan {\n  rankdir=LR;\n";
  for (const DagNode& n : dag.nodes) {
    os << "  n" << n.id << " [label=\"" << n.label() << "\\n" << format_seconds(n.duration)
       << "\", shape=" << dot_shape(n) << "];\n";
  }
  for (auto [a, b] : dag.edges) os << "  n" << a << " -> n" << b << ";\n";
  os << "}\n";
  return os.str();
}

json to_json(const Dag& dag) {
  json nodes = json::array();
  for (const DagNode& n : dag.nodes) {
    nodes.push_back({{"id", n.id},
                     {"kind", node_kind_name(n.kind)},
                     {"resource", resource_name(n.resource)},
                     {"duration", n.duration},
                     {"label", n.label()},
                     {"layer", n.layer},
                     {"micro_batch", n.micro_batch},
                     {"expert", n.expert},
                     {"chunk", n.chunk},
                     {"tokens", n.tokens},
                     {"bytes", n.bytes}});
  }
  json edges = json::array();
  for (auto [a, b] : dag.edges) edges.push_back({a, b});
  return json{{"entry_id", dag.entry_id}, {"exit_id", dag.exit_id}, {"nodes", nodes}, {"edges", edges}};
}

}  // namespace moeplan
