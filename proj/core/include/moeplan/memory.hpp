// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "moeplan/hardware.hpp"
#include "moeplan/model.hpp"
#include "moeplan/phase.hpp"

namespace moeplan {

struct WorkloadSpec {
  std::int64_t prompt_len = 1;
  std::int64_t decode_len = 0;
  std::int64_t num_sequences = 1;
  Phase phase = Phase::kDecode;

  /// Tokens each sequence pushes through one forward pass.
  std::int64_t tokens_in_flight() const { return phase == Phase::kPrefill ? prompt_len : 1; }
  /// Context the attention mechanism sees; decode is sized at the final length.
  std::int64_t context_len() const {
    return phase == Phase::kPrefill ? prompt_len : prompt_len + decode_len;
  }
  std::int64_t max_context() const { return prompt_len + decode_len; }

  WorkloadSpec with_phase(Phase p) const {
    WorkloadSpec w = *this;
    w.phase = p;
    return w;
  }
  bool operator==(const WorkloadSpec&) const = default;
};

/// Throws Error{kInvalidArgument} naming the bad field.
void validate_workload(const WorkloadSpec& w);

struct BatchingPlan {
  std::int64_t B = 1;
  std::int64_t b_a = 1;
  std::int64_t b_e = 1;
  double omega = 0.0;
  Bytes s_expert = 0;
  Bytes s_params = 0;

  /// Sequences whose attention mechanism runs on the CPU.
  std::int64_t cpu_sequences() const {
    return static_cast<std::int64_t>(std::llround(omega * static_cast<double>(B)));
  }
  std::int64_t gpu_sequences() const { return B - cpu_sequences(); }
  /// b_a as actually launched (never larger than the GPU share).
  std::int64_t effective_b_a() const {
    const std::int64_t g = gpu_sequences();
    return g == 0 ? 0 : std::min(b_a, g);
  }
  std::int64_t gpu_micro_batches() const {
    const std::int64_t g = gpu_sequences();
    return g == 0 ? 0 : (g + b_a - 1) / b_a;
  }

  bool operator==(const BatchingPlan&) const = default;
};

/// True when omega is a multiple of 0.1 in [0, 1].
bool on_omega_grid(double omega);

/// Checks the structural invariants of a plan against a model (b_a range,
/// b_e >= 1, omega in [0, 1] on the 0.1 grid, expert-buffer floor,
/// s_params <= S_Model). Throws Error{kInfeasiblePlan} naming the field.
void validate_plan(const ModelSpec& model, const BatchingPlan& plan);

nlohmann::json to_json(const BatchingPlan& plan);
BatchingPlan plan_from_json(const nlohmann::json& doc);

struct MemoryFootprint {
  Bytes s_kv_cpu = 0;
  Bytes s_kv_gpu = 0;
  Bytes s_is = 0;
  Bytes s_model = 0;
  Bytes s_dense = 0;
  Bytes s_expert = 0;
  Bytes s_params = 0;
  Bytes host_total = 0;
  Bytes gpu_total = 0;
  bool host_feasible = false;
  bool gpu_feasible = false;

  bool feasible() const { return host_feasible && gpu_feasible; }
  bool operator==(const MemoryFootprint&) const = default;
};

nlohmann::json to_json(const MemoryFootprint& fp);
MemoryFootprint footprint_from_json(const nlohmann::json& doc);

/// Components of the intermediate-state term.
struct IntermediateBreakdown {
  Bytes hidden = 0;
  Bytes attention = 0;
  Bytes expert = 0;
  Bytes total() const { return hidden + attention + expert; }
};

/// Transient GPU bytes of one attention launch over `seqs` sequences,
/// including the up-projected KV of latent-KV models.
Bytes attention_activation_bytes(const ModelSpec& model, const WorkloadSpec& w, std::int64_t seqs);

Bytes kv_bytes_per_sequence(const ModelSpec& model, const WorkloadSpec& w);
Bytes kv_cpu_bytes(const ModelSpec& model, const WorkloadSpec& w, std::int64_t B);
Bytes kv_gpu_bytes(const ModelSpec& model, const WorkloadSpec& w, const BatchingPlan& plan);
IntermediateBreakdown intermediate_breakdown(const ModelSpec& model, const WorkloadSpec& w,
                                             const BatchingPlan& plan);
Bytes intermediate_bytes(const ModelSpec& model, const WorkloadSpec& w, const BatchingPlan& plan);

MemoryFootprint check_constraints(const ModelSpec& model, const HardwareProfile& hw,
                                  const WorkloadSpec& w, const BatchingPlan& plan);

/// Largest B for which the plan (other fields fixed) is host- and
/// GPU-feasible. Throws Error{kNoFeasibleB}.
std::int64_t max_feasible_B(const ModelSpec& model, const HardwareProfile& hw,
                            const WorkloadSpec& w, const BatchingPlan& plan);

/// Which weights the s_params budget keeps resident: dense modules of layers
/// 0.. first (the last one possibly partial), then whole experts
/// round-robin across layers.
struct CacheLayout {
  std::vector<Bytes> dense_cached;               // per layer
  std::vector<std::vector<bool>> expert_cached;  // [layer][expert]
  Bytes cached_expert_bytes = 0;
  Bytes cached_bytes() const;
  bool all_experts_cached() const;
};

CacheLayout cache_layout(const ModelSpec& model, Bytes s_params);

}  // namespace moeplan
