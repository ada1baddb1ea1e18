// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moeplan/model.hpp"
#include "moeplan/phase.hpp"

namespace moeplan {

/// A priced, powered part of the host; consumed by the cost model.
struct Component {
  std::string name;
  double power_watts = 0.0;
  double price = 0.0;

  bool operator==(const Component&) const = default;
};

/// GPU + host, joined by independent HtoD and DtoH links. Units are SI.
struct HardwareProfile {
  Bytes m_g = 0;
  Bytes m_c = 0;
  double bw_htod = 0.0;
  double bw_dtoh = 0.0;
  double gpu_peak_flops = 0.0;
  double gpu_mem_bw = 0.0;
  double gpu_launch_overhead = 0.0;
  double cpu_attn_flops = 0.0;  // 0: CPU attention unavailable
  std::vector<Component> components;

  bool cpu_attention_available() const { return cpu_attn_flops > 0.0; }
  bool operator==(const HardwareProfile&) const = default;
};

enum class ModuleKind {
  kPreAttention,
  kAttentionMechanismGpu,
  kAttentionMechanismCpu,
  kPostAttention,
  kExpert,
  kRouter,
};

std::string_view module_kind_name(ModuleKind kind);
/// Throws Error{kUnknownModuleKind}.
ModuleKind parse_module_kind(std::string_view text);

/// Which phase a table was profiled for. Attention mechanism costs differ in
/// shape between prefill (shared KV per sequence) and decode (one query per
/// sequence scanning its own context); other kinds use kAny.
enum class TablePhase { kAny, kPrefill, kDecode };

struct LatencyPoint {
  std::int64_t tokens = 0;
  std::int64_t context_len = 0;
  double latency = 0.0;  // seconds

  bool operator==(const LatencyPoint&) const = default;
};

/// Measured latency of one module as a function of (tokens, context_len).
/// Construction validates positivity, monotonicity in tokens, and that every
/// context length carries at least two token counts.
class LatencyTable {
 public:
  /// Throws Error{kNonMonotoneLatency | kSchemaError}.
  LatencyTable(ModuleKind kind, TablePhase phase, std::vector<LatencyPoint> entries);

  ModuleKind module_kind() const { return kind_; }
  TablePhase phase() const { return phase_; }
  /// Sorted by (context_len, tokens).
  const std::vector<LatencyPoint>& entries() const { return entries_; }

  /// Piecewise-linear in tokens (last-segment extrapolation above, clamped
  /// below), then linear in context between the bracketing profiled contexts.
  double lookup(double tokens, double context_len) const;

 private:
  struct Curve {
    std::int64_t context_len;
    std::vector<double> tokens;
    std::vector<double> latency;
  };
  static double lookup_curve(const Curve& curve, double tokens);

  ModuleKind kind_;
  TablePhase phase_;
  std::vector<LatencyPoint> entries_;
  std::vector<Curve> curves_;
};

struct Profile {
  HardwareProfile hardware;
  std::vector<LatencyTable> tables;
};

/// Validates hardware invariants (m_g < m_c, rates > 0). Throws kSchemaError.
void validate_hardware(const HardwareProfile& hw);

HardwareProfile hardware_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const HardwareProfile& hw);
nlohmann::json to_json(const LatencyTable& table);
nlohmann::json profile_to_json(const HardwareProfile& hw, const std::vector<LatencyTable>& tables);

/// Parses a profiling document: {"hardware": {...}, "latency_tables": [...]}.
/// Throws Error{kSchemaError | kNonMonotoneLatency}.
Profile ingest_profile(const nlohmann::json& doc);

/// Roofline-synthesized tables for every module kind of `model` on `hw`.
std::vector<LatencyTable> synth_profile(const HardwareProfile& hw, const ModelSpec& model);

/// Seconds for `tokens` tokens at `context_len`. Prefers a table profiled for
/// `phase`, falling back to a kAny table. Throws Error{kUnknownModuleKind}.
double latency_lookup(const std::vector<LatencyTable>& tables, ModuleKind kind,
                      double tokens, double context_len,
                      TablePhase phase = TablePhase::kAny);
bool has_table(const std::vector<LatencyTable>& tables, ModuleKind kind);

/// FLOPs a module performs on `tokens` tokens (numerator of achieved FLOP/s).
double module_flops(const ModelSpec& model, ModuleKind kind, double tokens,
                    double context_len);

/// Smallest token count whose achieved FLOP/s reaches
/// `utilization_target * gpu_peak_flops`. Doubling scan, then bisection.
/// Throws Error{kUnreachable | kInvalidArgument}.
std::int64_t saturation_batch(const Profile& profile, const ModelSpec& model,
                              ModuleKind kind, std::int64_t context_len,
                              double utilization_target,
                              TablePhase phase = TablePhase::kAny);

/// Smallest expert token count whose compute time covers fetching one expert
/// over HtoD (zero GPU idle when compute and the next fetch overlap).
std::int64_t zero_idle_expert_batch(const Profile& profile, const ModelSpec& model);

/// max(0, 1 - expert compute / expert fetch) at `tokens`.
double expert_idle_ratio(const Profile& profile, const ModelSpec& model, std::int64_t tokens);

/// Frozen hardware fixtures: "a5000-c1", "a5000-c2", "a5000-c2-nocpu", "tiny-test".
HardwareProfile hardware_preset(std::string_view name);
const std::vector<std::string>& hardware_preset_names();

inline constexpr std::int64_t kMaxProbeTokens = std::int64_t{1} << 20;

}  // namespace moeplan
