// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "moeplan/hardware.hpp"
#include "moeplan/memory.hpp"
#include "moeplan/model.hpp"

namespace moeplan {

enum class Resource { kGpuCompute, kCpuCompute, kHtoDLink, kDtoHLink };
inline constexpr std::size_t kNumResources = 4;

std::string_view resource_name(Resource r);

enum class NodeKind {
  kEntry,
  kExit,
  kWeightCopy,
  kKvCopyIn,
  kKvCopyOut,
  kPreAttention,
  kAttnMechGpu,
  kAttnMechCpu,
  kPostAttention,
  kRouter,
  kExpertCompute,
};

std::string_view node_kind_name(NodeKind k);
/// Fixed kind -> resource mapping. Entry/exit are zero-cost markers that sit
/// on the GPU stream but never take part in serialization.
Resource resource_of(NodeKind k);

inline constexpr int kSharedExpert = -2;

struct DagNode {
  int id = 0;
  NodeKind kind = NodeKind::kEntry;
  Resource resource = Resource::kGpuCompute;
  double duration = 0.0;
  int layer = -1;
  int micro_batch = -1;  // -1: CPU share (attention) or n/a
  int expert = -1;       // kSharedExpert for shared-expert chunks; -1 dense
  int chunk = -1;
  std::int64_t tokens = 0;
  Bytes bytes = 0;       // copy payload
  Bytes activation = 0;  // transient GPU bytes while running

  bool synthetic() const { return kind == NodeKind::kEntry || kind == NodeKind::kExit; }
  std::string label() const;
};

struct Dag {
  std::vector<DagNode> nodes;
  std::vector<std::pair<int, int>> edges;
  int entry_id = 0;
  int exit_id = 0;

  std::vector<std::vector<int>> predecessors() const;
  std::vector<std::vector<int>> successors() const;
};

/// Compressed adjacency: neighbours of v are index[offset[v] .. offset[v+1]).
struct Adjacency {
  std::vector<std::size_t> offset;
  std::vector<int> index;

  std::size_t begin(int v) const { return offset[static_cast<std::size_t>(v)]; }
  std::size_t end(int v) const { return offset[static_cast<std::size_t>(v) + 1]; }
};

Adjacency out_adjacency(const Dag& dag);
Adjacency in_adjacency(const Dag& dag);

/// Per-resource submission order. The default follows program order: HtoD
/// carries dense weights, then KV-in by micro-batch, then experts by index,
/// layer by layer; the other resources keep construction order.
struct OrderPolicy {
  enum class HtoD { kDenseKvExperts, kDenseExpertsKv };
  HtoD htod = HtoD::kDenseKvExperts;
};

/// Per-layer per-expert token counts for the sparse layer.
using ExpertCounts = std::vector<std::vector<std::int64_t>>;

/// Deterministic split of `tokens` over `experts`: floor share each, the
/// remainder one apiece to the lowest indices.
std::vector<std::int64_t> even_split(std::int64_t tokens, std::int64_t experts);
ExpertCounts even_expert_counts(const ModelSpec& model, const WorkloadSpec& w,
                                const BatchingPlan& plan);

/// Node durations for one (model, hardware, tables, workload, plan, phase).
class NodeCosts {
 public:
  NodeCosts(const ModelSpec& model, const HardwareProfile& hw,
            const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
            const BatchingPlan& plan);

  double pre_attention(std::int64_t seqs) const;
  double attn_gpu(std::int64_t seqs) const;
  double attn_cpu(std::int64_t seqs) const;
  double post_attention() const;
  double router() const;
  double expert(std::int64_t tokens) const;
  double shared_expert(std::int64_t tokens) const;
  double htod(Bytes bytes) const { return static_cast<double>(bytes) / hw_.bw_htod; }
  double dtoh(Bytes bytes) const { return static_cast<double>(bytes) / hw_.bw_dtoh; }

  Bytes kv_in_bytes(std::int64_t seqs) const;
  Bytes kv_out_bytes(std::int64_t seqs) const;
  Bytes attn_activation(std::int64_t seqs) const;
  Bytes expert_activation(std::int64_t tokens) const;

  const WorkloadSpec& workload() const { return w_; }

 private:
  const ModelSpec& model_;
  const HardwareProfile& hw_;
  const std::vector<LatencyTable>& tables_;
  WorkloadSpec w_;
  BatchingPlan plan_;
  TablePhase table_phase_;
};

/// One layer of the offloading graph, unserialized. Throws Error{kInfeasiblePlan}.
Dag build_layer_dag(const ModelSpec& model, const HardwareProfile& hw,
                    const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                    const BatchingPlan& plan, Phase phase);

/// All layers spliced exit-to-entry, unserialized. `counts` overrides the
/// even per-expert split when given.
Dag build_forward_graph(const ModelSpec& model, const HardwareProfile& hw,
                        const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                        const BatchingPlan& plan, Phase phase,
                        const ExpertCounts* counts = nullptr);

/// build_forward_graph followed by serialize_resources(default policy).
Dag build_forward_dag(const ModelSpec& model, const HardwareProfile& hw,
                      const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                      const BatchingPlan& plan, Phase phase);

/// Node ids of each resource in submission order, indexed by Resource.
std::array<std::vector<int>, kNumResources> resource_order(const Dag& dag,
                                                           const OrderPolicy& policy = {});

/// Adds chain edges between consecutive nodes of each resource. Throws
/// Error{kCycleIntroduced} when the policy contradicts a data dependency.
Dag serialize_resources(const Dag& dag, const OrderPolicy& policy = {});

/// Throws Error{kCyclicGraph} if not acyclic. Returns a topological order.
std::vector<int> topological_order(const Dag& dag);

std::string export_dot(const Dag& dag);
nlohmann::json to_json(const Dag& dag);

}  // namespace moeplan
