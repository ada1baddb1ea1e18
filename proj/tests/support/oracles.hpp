// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent reference implementations used as test oracles. None of these
// call the library routine they check.

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "moeplan/moeplan.hpp"

namespace moeplan::oracle {

/// Max over every entry-to-exit path of the left-to-right duration sum, by
/// explicit DFS path enumeration.
double enumerate_max_path(const Dag& dag);
std::int64_t count_paths(const Dag& dag);

/// Random connected DAG with `n` nodes (entry and exit included) and
/// shuffled ids, so id order is not a topological order.
Dag random_dag(std::mt19937_64& rng, int n, double edge_probability);

/// Host and GPU totals re-summed from the size formulas.
struct Totals {
  Bytes host = 0;
  Bytes gpu = 0;
};
Totals footprint(const ModelSpec& m, const WorkloadSpec& w, const BatchingPlan& p);
bool feasible(const ModelSpec& m, const HardwareProfile& hw, const WorkloadSpec& w,
              const BatchingPlan& p);

/// Largest feasible B by linear scan over 1..limit; 0 when none.
std::int64_t scan_max_feasible_B(const ModelSpec& m, const HardwareProfile& hw,
                                 const WorkloadSpec& w, BatchingPlan p, std::int64_t limit);

/// Smallest n in 1..limit whose achieved FLOP/s reaches target * peak; 0 if none.
std::int64_t scan_saturation(const Profile& profile, const ModelSpec& m, ModuleKind kind,
                             std::int64_t context_len, double target, std::int64_t limit);
/// Smallest n whose expert latency covers one expert fetch; 0 if none.
std::int64_t scan_zero_idle(const Profile& profile, const ModelSpec& m, std::int64_t limit);

/// Evaluates every plan and keeps the best, breaking throughput ties on the
/// lexicographically smallest tuple.
PlanEvaluation exhaustive_best(const ModelSpec& m, const HardwareProfile& hw,
                               const std::vector<LatencyTable>& tables, const WorkloadSpec& w,
                               const std::vector<BatchingPlan>& plans, Phase phase);

/// Parsed form of the DOT subset the exporter emits.
struct DotGraph {
  std::string name;
  std::map<std::string, std::map<std::string, std::string>> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  std::map<std::string, std::string> graph_attrs;
};

/// Strict parser for `digraph ID { stmt* }` with node, edge and graph
/// attribute statements. Throws std::runtime_error with an offset on
/// malformed input, edges to undeclared nodes, or duplicate node ids.
DotGraph parse_dot(const std::string& text);

}  // namespace moeplan::oracle
