// SPDX-License-Identifier: Apache-2.0
#include "moeplan/hardware.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "moeplan/error.hpp"

namespace moeplan {

using nlohmann::json;

std::string_view phase_name(Phase phase) {
  return phase == Phase::kPrefill ? "prefill" : "decode";
}

Phase parse_phase(std::string_view text) {
  if (text == "prefill") return Phase::kPrefill;
  if (text == "decode") return Phase::kDecode;
  throw Error(ErrorCode::kSchemaError, "phase",
              "phase must be 'prefill' or 'decode', got '" + std::string(text) + "'");
}

std::string_view module_kind_name(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::kPreAttention: return "pre_attention";
    case ModuleKind::kAttentionMechanismGpu: return "attention_mechanism_gpu";
    case ModuleKind::kAttentionMechanismCpu: return "attention_mechanism_cpu";
    case ModuleKind::kPostAttention: return "post_attention";
    case ModuleKind::kExpert: return "expert";
    case ModuleKind::kRouter: return "router";
  }
  return "unknown";
}

ModuleKind parse_module_kind(std::string_view text) {
  for (ModuleKind k : {ModuleKind::kPreAttention, ModuleKind::kAttentionMechanismGpu,
                       ModuleKind::kAttentionMechanismCpu, ModuleKind::kPostAttention,
                       ModuleKind::kExpert, ModuleKind::kRouter}) {
    if (module_kind_name(k) == text) return k;
  }
  throw Error(ErrorCode::kUnknownModuleKind, std::string(text),
              "unknown module kind '" + std::string(text) + "'");
}

namespace {

std::string_view table_phase_name(TablePhase p) {
  switch (p) {
    case TablePhase::kAny: return "any";
    case TablePhase::kPrefill: return "prefill";
    case TablePhase::kDecode: return "decode";
  }
  return "any";
}

TablePhase parse_table_phase(std::string_view text) {
  if (text == "any") return TablePhase::kAny;
  if (text == "prefill") return TablePhase::kPrefill;
  if (text == "decode") return TablePhase::kDecode;
  throw Error(ErrorCode::kSchemaError, "phase",
              "table phase must be any|prefill|decode, got '" + std::string(text) + "'");
}

}  // namespace

LatencyTable::LatencyTable(ModuleKind kind, TablePhase phase,
                           std::vector<LatencyPoint> entries)
    : kind_(kind), phase_(phase), entries_(std::move(entries)) {
  const std::string kind_name(module_kind_name(kind));
  if (entries_.empty()) {
    throw Error(ErrorCode::kSchemaError, kind_name, "latency table '" + kind_name + "' is empty");
  }
  std::sort(entries_.begin(), entries_.end(), [](const LatencyPoint& a, const LatencyPoint& b) {
    return a.context_len != b.context_len ? a.context_len < b.context_len : a.tokens < b.tokens;
  });
  for (const LatencyPoint& p : entries_) {
    if (p.tokens < 1 || p.context_len < 0) {
      throw Error(ErrorCode::kSchemaError, kind_name,
                  "latency table '" + kind_name + "' has tokens < 1 or negative context");
    }
    if (!(p.latency > 0.0) || !std::isfinite(p.latency)) {
      throw Error(ErrorCode::kSchemaError, kind_name,
                  "latency table '" + kind_name + "' has a non-positive latency");
    }
  }
  for (std::size_t i = 0; i < entries_.size();) {
    Curve curve{entries_[i].context_len, {}, {}};
    std::size_t j = i;
    for (; j < entries_.size() && entries_[j].context_len == curve.context_len; ++j) {
      const LatencyPoint& p = entries_[j];
      if (!curve.tokens.empty()) {
        if (static_cast<double>(p.tokens) == curve.tokens.back()) {
          throw Error(ErrorCode::kSchemaError, kind_name,
                      "latency table '" + kind_name + "' repeats a (tokens, context) point");
        }
        if (p.latency < curve.latency.back()) {
          const LatencyPoint& prev = entries_[j - 1];
          throw Error(ErrorCode::kNonMonotoneLatency, kind_name,
                      "latency table '" + kind_name + "' decreases from (" +
                          std::to_string(prev.tokens) + ", " + std::to_string(prev.context_len) +
                          ") to (" + std::to_string(p.tokens) + ", " +
                          std::to_string(p.context_len) + ")");
        }
      }
      curve.tokens.push_back(static_cast<double>(p.tokens));
      curve.latency.push_back(p.latency);
    }
    if (curve.tokens.size() < 2) {
      throw Error(ErrorCode::kSchemaError, kind_name,
                  "latency table '" + kind_name + "' needs >= 2 token counts at context " +
                      std::to_string(curve.context_len));
    }
    curves_.push_back(std::move(curve));
    i = j;
  }
}

double LatencyTable::lookup_curve(const Curve& c, double tokens) {
  const auto& t = c.tokens;
  const auto& l = c.latency;
  if (tokens <= t.front()) return l.front();
  std::size_t hi = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), tokens) - t.begin());
  if (hi >= t.size()) hi = t.size() - 1;  // extrapolate along the last segment
  const std::size_t lo = hi - 1;
  const double slope = (l[hi] - l[lo]) / (t[hi] - t[lo]);
  return l[lo] + slope * (tokens - t[lo]);
}

double LatencyTable::lookup(double tokens, double context_len) const {
  if (curves_.size() == 1 || context_len <= static_cast<double>(curves_.front().context_len)) {
    return lookup_curve(curves_.front(), tokens);
  }
  std::size_t hi = 1;
  while (hi + 1 < curves_.size() && static_cast<double>(curves_[hi].context_len) < context_len) {
    ++hi;
  }
  const Curve& a = curves_[hi - 1];
  const Curve& b = curves_[hi];
  const double la = lookup_curve(a, tokens);
  const double lb = lookup_curve(b, tokens);
  const double ca = static_cast<double>(a.context_len);
  const double cb = static_cast<double>(b.context_len);
  const double frac = (context_len - ca) / (cb - ca);
  if (frac <= 1.0) return la + (lb - la) * frac;
  // Past the last context: scale the last curve by a token-independent
  // factor so the result stays non-decreasing in tokens.
  const double at_end = lookup_curve(a, b.tokens.back());
  const double growth = std::max(0.0, lookup_curve(b, b.tokens.back()) / at_end - 1.0);
  return lb * (1.0 + growth * (frac - 1.0));
}

void validate_hardware(const HardwareProfile& hw) {
  auto fail = [](const char* field, const std::string& what) {
    throw Error(ErrorCode::kSchemaError, field, std::string("hardware.") + field + " " + what);
  };
  if (hw.m_g <= 0) fail("m_g", "must be > 0");
  if (hw.m_c <= 0) fail("m_c", "must be > 0");
  if (!(hw.m_g < hw.m_c)) fail("m_g", "must be smaller than m_c (offloading premise)");
  if (!(hw.bw_htod > 0)) fail("bw_htod", "must be > 0");
  if (!(hw.bw_dtoh > 0)) fail("bw_dtoh", "must be > 0");
  if (!(hw.gpu_peak_flops > 0)) fail("gpu_peak_flops", "must be > 0");
  if (!(hw.gpu_mem_bw > 0)) fail("gpu_mem_bw", "must be > 0");
  if (!(hw.gpu_launch_overhead >= 0)) fail("gpu_launch_overhead", "must be >= 0");
  if (!(hw.cpu_attn_flops >= 0)) fail("cpu_attn_flops", "must be >= 0");
}

namespace {

const json& field(const json& doc, const char* name, const char* scope) {
  auto it = doc.find(name);
  if (it == doc.end() || !it->is_number()) {
    throw Error(ErrorCode::kSchemaError, name,
                std::string(scope) + "." + name + " is missing or not a number");
  }
  return *it;
}

}  // namespace

HardwareProfile hardware_from_json(const json& doc) {
  if (!doc.is_object()) {
    throw Error(ErrorCode::kSchemaError, "hardware", "hardware must be an object");
  }
  HardwareProfile hw;
  hw.m_g = field(doc, "m_g", "hardware").get<Bytes>();
  hw.m_c = field(doc, "m_c", "hardware").get<Bytes>();
  hw.bw_htod = field(doc, "bw_htod", "hardware").get<double>();
  hw.bw_dtoh = field(doc, "bw_dtoh", "hardware").get<double>();
  hw.gpu_peak_flops = field(doc, "gpu_peak_flops", "hardware").get<double>();
  hw.gpu_mem_bw = field(doc, "gpu_mem_bw", "hardware").get<double>();
  hw.gpu_launch_overhead = field(doc, "gpu_launch_overhead", "hardware").get<double>();
  hw.cpu_attn_flops = field(doc, "cpu_attn_flops", "hardware").get<double>();
  if (auto it = doc.find("components"); it != doc.end()) {
    if (!it->is_array()) {
      throw Error(ErrorCode::kSchemaError, "components", "hardware.components must be an array");
    }
    for (const json& c : *it) {
      if (!c.is_object() || !c.contains("name") || !c["name"].is_string()) {
        throw Error(ErrorCode::kSchemaError, "components",
                    "each component needs a string 'name'");
      }
      hw.components.push_back(Component{c["name"].get<std::string>(),
                                        field(c, "power_watts", "component").get<double>(),
                                        field(c, "price", "component").get<double>()});
    }
  }
  validate_hardware(hw);
  return hw;
}

json to_json(const HardwareProfile& hw) {
  json components = json::array();
  for (const Component& c : hw.components) {
    components.push_back({{"name", c.name}, {"power_watts", c.power_watts}, {"price", c.price}});
  }
  return json{{"m_g", hw.m_g},
              {"m_c", hw.m_c},
              {"bw_htod", hw.bw_htod},
              {"bw_dtoh", hw.bw_dtoh},
              {"gpu_peak_flops", hw.gpu_peak_flops},
              {"gpu_mem_bw", hw.gpu_mem_bw},
              {"gpu_launch_overhead", hw.gpu_launch_overhead},
              {"cpu_attn_flops", hw.cpu_attn_flops},
              {"components", components}};
}

json to_json(const LatencyTable& table) {
  json entries = json::array();
  for (const LatencyPoint& p : table.entries()) {
    entries.push_back({{"tokens", p.tokens}, {"context_len", p.context_len}, {"latency", p.latency}});
  }
  return json{{"module_kind", module_kind_name(table.module_kind())},
              {"phase", table_phase_name(table.phase())},
              {"entries", entries}};
}

json profile_to_json(const HardwareProfile& hw, const std::vector<LatencyTable>& tables) {
  json arr = json::array();
  for (const LatencyTable& t : tables) arr.push_back(to_json(t));
  return json{{"hardware", to_json(hw)}, {"latency_tables", arr}};
}

Profile ingest_profile(const json& doc) {
  if (!doc.is_object() || !doc.contains("hardware")) {
    throw Error(ErrorCode::kSchemaError, "hardware", "profile document needs a 'hardware' object");
  }
  Profile profile;
  profile.hardware = hardware_from_json(doc["hardware"]);
  if (auto it = doc.find("latency_tables"); it != doc.end()) {
    if (!it->is_array()) {
      throw Error(ErrorCode::kSchemaError, "latency_tables", "latency_tables must be an array");
    }
    for (const json& t : *it) {
      if (!t.is_object() || !t.contains("module_kind") || !t["module_kind"].is_string() ||
          !t.contains("entries") || !t["entries"].is_array()) {
        throw Error(ErrorCode::kSchemaError, "latency_tables",
                    "each latency table needs 'module_kind' and 'entries'");
      }
      const ModuleKind kind = parse_module_kind(t["module_kind"].get<std::string>());
      TablePhase phase = TablePhase::kAny;
      if (auto p = t.find("phase"); p != t.end()) phase = parse_table_phase(p->get<std::string>());
      std::vector<LatencyPoint> points;
      for (const json& e : t["entries"]) {
        if (e.is_array() && e.size() == 3) {
          points.push_back({e[0].get<std::int64_t>(), e[1].get<std::int64_t>(), e[2].get<double>()});
        } else if (e.is_object()) {
          points.push_back({field(e, "tokens", "entry").get<std::int64_t>(),
                            field(e, "context_len", "entry").get<std::int64_t>(),
                            field(e, "latency", "entry").get<double>()});
        } else {
          throw Error(ErrorCode::kSchemaError, "entries",
                      "latency entries must be {tokens, context_len, latency}");
        }
      }
      profile.tables.emplace_back(kind, phase, std::move(points));
    }
  }
  return profile;
}

double module_flops(const ModelSpec& m, ModuleKind kind, double tokens, double context_len) {
  switch (kind) {
    case ModuleKind::kPreAttention: return tokens * m.pre_attention_flops_per_token();
    case ModuleKind::kPostAttention: return tokens * m.post_attention_flops_per_token();
    case ModuleKind::kAttentionMechanismGpu:
    case ModuleKind::kAttentionMechanismCpu:
      return tokens * m.attn_flops_per_token.a1 * context_len;
    case ModuleKind::kExpert: return tokens * m.expert_flops_per_token;
    case ModuleKind::kRouter: return tokens * m.router_flops_per_token;
  }
  return 0.0;
}

namespace {

// Bytes a GPU module moves through device memory for `n` tokens.
double gpu_bytes_touched(const ModelSpec& m, ModuleKind kind, TablePhase phase, double n,
                         double ctx) {
  const double hidden = static_cast<double>(m.hidden_bytes_per_token);
  const double frac = m.pre_attention_flops_fraction;
  switch (kind) {
    case ModuleKind::kPreAttention:
      return static_cast<double>(m.attention_weights_bytes) * frac + 2.0 * n * hidden;
    case ModuleKind::kPostAttention:
      return static_cast<double>(m.attention_weights_bytes) * (1.0 - frac) + 2.0 * n * hidden;
    case ModuleKind::kRouter:
      return m.router_flops_per_token / 2.0 * static_cast<double>(m.bytes_per_element) + n * hidden;
    case ModuleKind::kExpert:
      return static_cast<double>(m.expert_bytes) +
             n * (2.0 * hidden + static_cast<double>(m.expert_activation_bytes_per_token));
    case ModuleKind::kAttentionMechanismGpu:
    case ModuleKind::kAttentionMechanismCpu: {
      const double kv = static_cast<double>(m.kv_bytes_per_token_layer);
      if (phase == TablePhase::kPrefill) return n * (kv + 2.0 * hidden);
      return n * ctx * kv + 2.0 * n * hidden;
    }
  }
  return 0.0;
}

std::vector<std::int64_t> synth_token_grid() {
  std::vector<std::int64_t> grid;
  for (std::int64_t n = 1; n <= (std::int64_t{1} << 18); n *= 2) grid.push_back(n);
  return grid;
}

std::vector<std::int64_t> synth_context_grid() {
  std::vector<std::int64_t> grid;
  for (std::int64_t c = 16; c <= 65536; c *= 2) grid.push_back(c);
  return grid;
}

}  // namespace

std::vector<LatencyTable> synth_profile(const HardwareProfile& hw, const ModelSpec& model) {
  const auto tokens = synth_token_grid();
  const auto contexts = synth_context_grid();
  std::vector<LatencyTable> out;

  auto gpu_table = [&](ModuleKind kind, TablePhase phase, const std::vector<std::int64_t>& ctxs) {
    std::vector<LatencyPoint> pts;
    for (std::int64_t c : ctxs) {
      for (std::int64_t n : tokens) {
        const double nd = static_cast<double>(n);
        const double cd = static_cast<double>(c);
        const double compute = module_flops(model, kind, nd, cd) / hw.gpu_peak_flops;
        const double memory = gpu_bytes_touched(model, kind, phase, nd, cd) / hw.gpu_mem_bw;
        double latency = hw.gpu_launch_overhead + std::max(compute, memory);
        if (!(latency > 0.0)) latency = 1e-12;
        pts.push_back({n, c, latency});
      }
    }
    out.emplace_back(kind, phase, std::move(pts));
  };

  const std::vector<std::int64_t> no_context = {0};
  gpu_table(ModuleKind::kPreAttention, TablePhase::kAny, no_context);
  gpu_table(ModuleKind::kAttentionMechanismGpu, TablePhase::kPrefill, contexts);
  gpu_table(ModuleKind::kAttentionMechanismGpu, TablePhase::kDecode, contexts);
  gpu_table(ModuleKind::kPostAttention, TablePhase::kAny, no_context);
  gpu_table(ModuleKind::kRouter, TablePhase::kAny, no_context);
  gpu_table(ModuleKind::kExpert, TablePhase::kAny, no_context);

  if (hw.cpu_attention_available()) {
    // The CPU kernel works from host-resident KV; models whose KV is stored
    // in a compressed latent form must expand it there first.
    std::vector<LatencyPoint> pts;
    for (std::int64_t c : contexts) {
      for (std::int64_t n : tokens) {
        const double flops =
            module_flops(model, ModuleKind::kAttentionMechanismCpu, static_cast<double>(n),
                         static_cast<double>(c)) *
            model.kv_upproject_factor;
        pts.push_back({n, c, flops / hw.cpu_attn_flops});
      }
    }
    out.emplace_back(ModuleKind::kAttentionMechanismCpu, TablePhase::kAny, std::move(pts));
  }
  return out;
}

namespace {

const LatencyTable* find_table(const std::vector<LatencyTable>& tables, ModuleKind kind,
                               TablePhase phase) {
  const LatencyTable* fallback = nullptr;
  for (const LatencyTable& t : tables) {
    if (t.module_kind() != kind) continue;
    if (t.phase() == phase) return &t;
    if (t.phase() == TablePhase::kAny) fallback = &t;
  }
  return fallback;
}

}  // namespace

bool has_table(const std::vector<LatencyTable>& tables, ModuleKind kind) {
  return std::any_of(tables.begin(), tables.end(),
                     [kind](const LatencyTable& t) { return t.module_kind() == kind; });
}

double latency_lookup(const std::vector<LatencyTable>& tables, ModuleKind kind, double tokens,
                      double context_len, TablePhase phase) {
  if (tokens < 1.0) {
    throw Error(ErrorCode::kInvalidArgument, std::string(module_kind_name(kind)),
                "latency lookup needs tokens >= 1");
  }
  const LatencyTable* t = find_table(tables, kind, phase);
  if (t == nullptr && phase != TablePhase::kAny) {
    // A phase-specific request may be served by the other phase's table only
    // when nothing else exists.
    for (const LatencyTable& cand : tables) {
      if (cand.module_kind() == kind) {
        t = &cand;
        break;
      }
    }
  }
  if (t == nullptr) {
    throw Error(ErrorCode::kUnknownModuleKind, std::string(module_kind_name(kind)),
                "no latency table for module kind '" + std::string(module_kind_name(kind)) + "'");
  }
  return t->lookup(tokens, context_len);
}

namespace {

// Smallest n in [1, kMaxProbeTokens] with pred(n); pred assumed monotone.
template <typename Pred>
std::optional<std::int64_t> doubling_then_bisect(Pred pred) {
  if (pred(1)) return 1;
  std::int64_t hi = 2;
  while (hi <= kMaxProbeTokens && !pred(hi)) hi *= 2;
  if (hi > kMaxProbeTokens) {
    if (!pred(kMaxProbeTokens)) return std::nullopt;
    hi = kMaxProbeTokens;
  }
  std::int64_t lo = hi / 2;  // pred(lo) false
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (pred(mid)) hi = mid;
    else lo = mid;
  }
  return hi;
}

}  // namespace

std::int64_t saturation_batch(const Profile& profile, const ModelSpec& model, ModuleKind kind,
                              std::int64_t context_len, double target, TablePhase phase) {
  if (!(target > 0.0) || target > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "utilization_target",
                "utilization target must be in (0, 1]");
  }
  const double peak = profile.hardware.gpu_peak_flops;
  const double ctx = static_cast<double>(context_len);
  auto reached = [&](std::int64_t n) {
    const double nd = static_cast<double>(n);
    const double achieved = module_flops(model, kind, nd, ctx) /
                            latency_lookup(profile.tables, kind, nd, ctx, phase);
    return achieved >= target * peak;
  };
  auto n = doubling_then_bisect(reached);
  if (!n) {
    throw Error(ErrorCode::kUnreachable, std::string(module_kind_name(kind)),
                "utilization target not reached within 2^20 tokens");
  }
  return *n;
}

std::int64_t zero_idle_expert_batch(const Profile& profile, const ModelSpec& model) {
  const double fetch = static_cast<double>(model.expert_bytes) / profile.hardware.bw_htod;
  auto covered = [&](std::int64_t n) {
    return latency_lookup(profile.tables, ModuleKind::kExpert, static_cast<double>(n), 0.0) >= fetch;
  };
  auto n = doubling_then_bisect(covered);
  if (!n) {
    throw Error(ErrorCode::kUnreachable, "expert", "expert compute never covers its fetch time");
  }
  return *n;
}

double expert_idle_ratio(const Profile& profile, const ModelSpec& model, std::int64_t tokens) {
  const double fetch = static_cast<double>(model.expert_bytes) / profile.hardware.bw_htod;
  const double compute =
      latency_lookup(profile.tables, ModuleKind::kExpert, static_cast<double>(tokens), 0.0);
  return std::max(0.0, 1.0 - compute / fetch);
}

namespace {

// A5000-class workstation: 24 GB GPU on PCIe 4.0 (32 GB/s each way), 768 GB/s
// device memory, fp16 tensor peak 55.6 TFLOP/s, and a 28-core EPYC host.
// The 50 us launch overhead is a fitted constant: with it an expert of the
// mixtral-8x7b preset reaches 99% of peak between 2^9 and 2^10 tokens.
HardwareProfile a5000(Bytes host_bytes, double cpu_flops, std::vector<Component> parts) {
  HardwareProfile hw;
  hw.m_g = 24'000'000'000;
  hw.m_c = host_bytes;
  hw.bw_htod = 32e9;
  hw.bw_dtoh = 32e9;
  hw.gpu_peak_flops = 55.6e12;
  hw.gpu_mem_bw = 768e9;
  hw.gpu_launch_overhead = 50e-6;
  hw.cpu_attn_flops = cpu_flops;
  hw.components = std::move(parts);
  return hw;
}

}  // namespace

HardwareProfile hardware_preset(std::string_view name) {
  const Component gpu{"1xNVIDIA-A5000", 200.0, 2500.0};
  const Component cpu{"1xAMD-7453", 100.0, 1200.0};
  const Component host512{"512GB Host", 80.0, 1100.0};
  const Component host256{"256GB Host", 40.0, 550.0};
  constexpr double kEpycAttnFlops = 100e9;
  if (name == "a5000-c1") return a5000(256'000'000'000, kEpycAttnFlops, {gpu, cpu, host256});
  if (name == "a5000-c2") return a5000(512'000'000'000, kEpycAttnFlops, {gpu, cpu, host512});
  if (name == "a5000-c2-nocpu") return a5000(512'000'000'000, 0.0, {gpu, cpu, host512});
  if (name == "tiny-test") {
    HardwareProfile hw;
    hw.m_g = 8 * (Bytes{1} << 20);
    hw.m_c = 64 * (Bytes{1} << 20);
    hw.bw_htod = 1e9;
    hw.bw_dtoh = 1e9;
    hw.gpu_peak_flops = 1e12;
    hw.gpu_mem_bw = 1e11;
    hw.gpu_launch_overhead = 10e-6;
    hw.cpu_attn_flops = 5e9;
    hw.components = {{"gpu", 100.0, 1000.0}, {"cpu", 50.0, 500.0}, {"host", 20.0, 200.0}};
    return hw;
  }
  throw Error(ErrorCode::kUnknownPreset, std::string(name),
              "unknown hardware preset '" + std::string(name) + "'");
}

const std::vector<std::string>& hardware_preset_names() {
  static const std::vector<std::string> names = {"a5000-c1", "a5000-c2", "a5000-c2-nocpu",
                                                 "tiny-test"};
  return names;
}

}  // namespace moeplan
