// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moeplan/dag.hpp"
#include "moeplan/hardware.hpp"
#include "moeplan/memory.hpp"
#include "moeplan/model.hpp"

namespace moeplan {

struct CriticalPath {
  double length = 0.0;
  std::vector<double> finish;  // earliest finish per node id
  std::vector<int> path;       // entry .. exit along the longest chain
};

/// Longest entry-to-exit path. Throws Error{kCyclicGraph}.
CriticalPath critical_path_detail(const Dag& dag);
double critical_path(const Dag& dag);

struct PlanEvaluation {
  BatchingPlan plan;
  Phase phase = Phase::kDecode;
  double t_forward = 0.0;
  double throughput = 0.0;  // tokens per second
  MemoryFootprint footprint;
  bool feasible = false;
  std::string reason;  // why infeasible, empty otherwise
};

nlohmann::json to_json(const PlanEvaluation& e);
PlanEvaluation evaluation_from_json(const nlohmann::json& doc);

struct SearchSpace {
  std::vector<std::int64_t> B;  // prefill accumulated batch grid
  std::vector<std::int64_t> b_a;
  std::vector<std::int64_t> b_e;
  std::vector<double> omega;
  std::vector<std::int64_t> expert_slots;
  std::vector<double> s_params_fractions;

  static SearchSpace defaults();
  /// Throws Error{kInvalidArgument} for empty or unsorted grids.
  void validate() const;
};

nlohmann::json to_json(const SearchSpace& s);
/// Overrides the default grids with whichever keys `doc` carries.
SearchSpace search_space_from_json(const nlohmann::json& doc);

/// Strict weak order behind the deterministic tie-break.
bool plan_less(const BatchingPlan& a, const BatchingPlan& b);

/// Tokens one forward pass of `plan` produces in `phase`.
double tokens_per_forward(const WorkloadSpec& w, const BatchingPlan& plan, Phase phase);

PlanEvaluation evaluate_plan(const ModelSpec& model, const HardwareProfile& hw,
                             const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                             const BatchingPlan& plan, Phase phase);

/// Lower bound on the critical path of the forward pass under the default
/// order policy, from resource busy times and the chains they force.
double resource_lower_bound(const ModelSpec& model, const HardwareProfile& hw,
                            const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                            const BatchingPlan& plan, Phase phase);

struct Enumeration {
  std::vector<BatchingPlan> plans;
  std::int64_t combinations = 0;
  std::map<std::string, std::int64_t> skipped;  // reason -> count
};

/// Throws Error{kNoFeasibleB} when host memory cannot hold the model plus one
/// sequence, Error{kEmptySearchSpace} when nothing else survives.
Enumeration enumerate_candidates(const ModelSpec& model, const HardwareProfile& hw,
                                 const WorkloadSpec& w, const SearchSpace& space, Phase phase);

struct SearchStats {
  std::int64_t candidates = 0;
  std::int64_t evaluated = 0;
};

/// Highest-throughput candidate; ties go to the lexicographically smallest
/// (B, b_a, b_e, omega, s_expert, s_params). Throws Error{kEmptySearchSpace}.
PlanEvaluation search(const ModelSpec& model, const HardwareProfile& hw,
                      const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                      const SearchSpace& space, Phase phase, SearchStats* stats = nullptr);

/// Best plan with a single unified batch (B = b_a, omega = 0). The batch must
/// fit both phases since a model-based system carries it through prefill
/// into decode. Throws Error{kEmptySearchSpace}.
PlanEvaluation model_based_baseline(const ModelSpec& model, const HardwareProfile& hw,
                                    const std::vector<LatencyTable>& tables,
                                    const WorkloadSpec& w, Phase phase,
                                    const SearchSpace& space = SearchSpace::defaults(),
                                    SearchStats* stats = nullptr);

/// Argmax over an explicit candidate list with the same pruning and
/// tie-break as search(). Throws Error{kEmptySearchSpace} when empty.
PlanEvaluation best_of(const ModelSpec& model, const HardwareProfile& hw,
                       const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                       const std::vector<BatchingPlan>& plans, Phase phase,
                       SearchStats* stats = nullptr);

}  // namespace moeplan
