// SPDX-License-Identifier: Apache-2.0
#include "moeplan/model.hpp"

#include <map>

#include "moeplan/error.hpp"

namespace moeplan {

namespace {

using nlohmann::json;

// Preset documents. Dimension constants come from the public architecture
// descriptions of each model family; they are external inputs and are
// written out in element counts so every byte figure can be re-derived.
// Precision: 2 bytes per element.
//
// mixtral-8x7b: 32 layers, hidden 4096, FFN 14336, 32 query heads, 8 KV heads,
//   head dim 128, 8 experts, top-2.
//   expert   = 3 * 4096 * 14336 * 2                         = 352,321,536 B
//   attn     = (4096*4096*2 + 4096*1024*2) * 2              =  83,886,080 B
//              + router 4096*8*2 + two norms 4096*2*2       =      81,920 B
//   kv/token = 2 (K,V) * 8 * 128 * 2                        =       4,096 B
//   a0       = 2 * 41,943,040 projection params; a1 = 4 * 32 * 128
// mixtral-8x22b: 56 layers, hidden 6144, FFN 16384, 48 query heads, 8 KV
//   heads, head dim 128, 8 experts, top-2.
// deepseek-v2-like: 60 layers, hidden 5120, expert FFN 1536, 2 shared experts,
//   160 routed experts, top-6, 128 heads, q rank 1536, latent KV rank 512 plus
//   64 rope dims, qk head dim 192 (128 + 64), v head dim 128.
//   latent kv/token = 576 * 2 = 1,152 B; up-projected K+V per token is
//   128 * (192 + 128) * 2 = 81,920 B, a factor of ~71 over the latent form.
//   attention activation per prompt token models eager attention at a
//   512-token reference prompt: two fp32 score tensors (2 * 128 * 512 * 4),
//   bf16 probabilities (128 * 512 * 2) and q/k/v/out (640 * 128 * 2)
//   = 819,200 B.
// tiny-test: synthetic 2-layer, 4-expert fixture for unit tests.
const char* const kPresetDocuments = R"json({
  "mixtral-8x7b": {
    "name": "mixtral-8x7b",
    "num_layers": 32,
    "experts_per_layer": 8,
    "top_k": 2,
    "shared_expert_bytes": 0,
    "attention_weights_bytes": 83968000,
    "expert_bytes": 352321536,
    "kv_bytes_per_token_layer": 4096,
    "hidden_bytes_per_token": 8192,
    "attn_flops_per_token": {"a0": 83886080, "a1": 16384},
    "expert_flops_per_token": 352321536,
    "bytes_per_element": 2,
    "pre_attention_flops_fraction": 0.6,
    "router_flops_per_token": 65536,
    "attn_activation_bytes_per_token": 16384,
    "expert_activation_bytes_per_token": 57344,
    "kv_upproject_factor": 1.0
  },
  "mixtral-8x22b": {
    "name": "mixtral-8x22b",
    "num_layers": 56,
    "experts_per_layer": 8,
    "top_k": 2,
    "shared_expert_bytes": 0,
    "attention_weights_bytes": 176283648,
    "expert_bytes": 603979776,
    "kv_bytes_per_token_layer": 4096,
    "hidden_bytes_per_token": 12288,
    "attn_flops_per_token": {"a0": 176160768, "a1": 24576},
    "expert_flops_per_token": 603979776,
    "bytes_per_element": 2,
    "pre_attention_flops_fraction": 0.5714,
    "router_flops_per_token": 98304,
    "attn_activation_bytes_per_token": 24576,
    "expert_activation_bytes_per_token": 65536,
    "kv_upproject_factor": 1.0
  },
  "deepseek-v2-like": {
    "name": "deepseek-v2-like",
    "num_layers": 60,
    "experts_per_layer": 160,
    "top_k": 6,
    "shared_expert_bytes": 94371840,
    "attention_weights_bytes": 300113920,
    "expert_bytes": 47185920,
    "kv_bytes_per_token_layer": 1152,
    "hidden_bytes_per_token": 10240,
    "attn_flops_per_token": {"a0": 298450944, "a1": 81920},
    "expert_flops_per_token": 47185920,
    "bytes_per_element": 2,
    "pre_attention_flops_fraction": 0.4378,
    "router_flops_per_token": 1638400,
    "attn_activation_bytes_per_token": 819200,
    "expert_activation_bytes_per_token": 6144,
    "kv_upproject_factor": 71.0
  },
  "tiny-test": {
    "name": "tiny-test",
    "num_layers": 2,
    "experts_per_layer": 4,
    "top_k": 2,
    "shared_expert_bytes": 0,
    "attention_weights_bytes": 2097152,
    "expert_bytes": 1048576,
    "kv_bytes_per_token_layer": 512,
    "hidden_bytes_per_token": 1024,
    "attn_flops_per_token": {"a0": 2097152, "a1": 2048},
    "expert_flops_per_token": 1048576,
    "bytes_per_element": 2,
    "pre_attention_flops_fraction": 0.5,
    "router_flops_per_token": 4096,
    "attn_activation_bytes_per_token": 2048,
    "expert_activation_bytes_per_token": 4096,
    "kv_upproject_factor": 1.0
  }
})json";

const json& presets() {
  static const json documents = json::parse(kPresetDocuments);
  return documents;
}

const json& require(const json& doc, const char* field) {
  auto it = doc.find(field);
  if (it == doc.end() || it->is_null()) {
    throw Error(ErrorCode::kMissingField, field,
                std::string("missing required field '") + field + "'");
  }
  return *it;
}

template <typename T>
T number(const json& value, const char* field) {
  if (!value.is_number()) {
    throw Error(ErrorCode::kSchemaError, field,
                std::string("field '") + field + "' must be a number");
  }
  return value.get<T>();
}

template <typename T>
T positive(const json& doc, const char* field) {
  T v = number<T>(require(doc, field), field);
  if (!(v > T{0})) {
    throw Error(ErrorCode::kNonPositiveValue, field,
                std::string("field '") + field + "' must be > 0");
  }
  return v;
}

template <typename T>
T optional_positive(const json& doc, const char* field, T fallback) {
  auto it = doc.find(field);
  if (it == doc.end() || it->is_null()) return fallback;
  T v = number<T>(*it, field);
  if (!(v > T{0})) {
    throw Error(ErrorCode::kNonPositiveValue, field,
                std::string("field '") + field + "' must be > 0");
  }
  return v;
}

}  // namespace

ModelSpec load_model_spec(const json& doc) {
  if (!doc.is_object()) {
    throw Error(ErrorCode::kSchemaError, "", "model document must be an object");
  }
  ModelSpec m;
  const json& name = require(doc, "name");
  if (!name.is_string()) {
    throw Error(ErrorCode::kSchemaError, "name", "field 'name' must be a string");
  }
  m.name = name.get<std::string>();
  m.num_layers = positive<std::int64_t>(doc, "num_layers");
  m.experts_per_layer = positive<std::int64_t>(doc, "experts_per_layer");
  m.top_k = positive<std::int64_t>(doc, "top_k");

  m.shared_expert_bytes =
      number<Bytes>(require(doc, "shared_expert_bytes"), "shared_expert_bytes");
  if (m.shared_expert_bytes < 0) {
    throw Error(ErrorCode::kNonPositiveValue, "shared_expert_bytes",
                "field 'shared_expert_bytes' must be >= 0");
  }
  m.attention_weights_bytes = positive<Bytes>(doc, "attention_weights_bytes");
  m.expert_bytes = positive<Bytes>(doc, "expert_bytes");
  m.kv_bytes_per_token_layer = positive<Bytes>(doc, "kv_bytes_per_token_layer");
  m.hidden_bytes_per_token = positive<Bytes>(doc, "hidden_bytes_per_token");

  const json& attn = require(doc, "attn_flops_per_token");
  if (!attn.is_object()) {
    throw Error(ErrorCode::kSchemaError, "attn_flops_per_token",
                "field 'attn_flops_per_token' must be an object {a0, a1}");
  }
  m.attn_flops_per_token.a0 = positive<double>(attn, "a0");
  m.attn_flops_per_token.a1 = positive<double>(attn, "a1");
  m.expert_flops_per_token = positive<double>(doc, "expert_flops_per_token");

  m.bytes_per_element = optional_positive<std::int64_t>(doc, "bytes_per_element", 2);
  m.pre_attention_flops_fraction =
      optional_positive<double>(doc, "pre_attention_flops_fraction", 0.5);
  if (m.pre_attention_flops_fraction >= 1.0) {
    throw Error(ErrorCode::kSchemaError, "pre_attention_flops_fraction",
                "field 'pre_attention_flops_fraction' must be in (0, 1)");
  }
  const double hidden_dim = static_cast<double>(m.hidden_bytes_per_token) /
                            static_cast<double>(m.bytes_per_element);
  m.router_flops_per_token = optional_positive<double>(
      doc, "router_flops_per_token",
      2.0 * hidden_dim * static_cast<double>(m.experts_per_layer));
  m.attn_activation_bytes_per_token = optional_positive<Bytes>(
      doc, "attn_activation_bytes_per_token", 2 * m.hidden_bytes_per_token);
  m.expert_activation_bytes_per_token = optional_positive<Bytes>(
      doc, "expert_activation_bytes_per_token", 2 * m.hidden_bytes_per_token);
  m.kv_upproject_factor = optional_positive<double>(doc, "kv_upproject_factor", 1.0);
  if (m.kv_upproject_factor < 1.0) {
    throw Error(ErrorCode::kSchemaError, "kv_upproject_factor",
                "field 'kv_upproject_factor' must be >= 1");
  }

  if (m.top_k > m.experts_per_layer) {
    throw Error(ErrorCode::kTopKExceedsExperts, "top_k",
                "top_k (" + std::to_string(m.top_k) + ") exceeds experts_per_layer (" +
                    std::to_string(m.experts_per_layer) + ")");
  }
  return m;
}

json to_json(const ModelSpec& m) {
  return json{
      {"name", m.name},
      {"num_layers", m.num_layers},
      {"experts_per_layer", m.experts_per_layer},
      {"top_k", m.top_k},
      {"shared_expert_bytes", m.shared_expert_bytes},
      {"attention_weights_bytes", m.attention_weights_bytes},
      {"expert_bytes", m.expert_bytes},
      {"kv_bytes_per_token_layer", m.kv_bytes_per_token_layer},
      {"hidden_bytes_per_token", m.hidden_bytes_per_token},
      {"attn_flops_per_token",
       {{"a0", m.attn_flops_per_token.a0}, {"a1", m.attn_flops_per_token.a1}}},
      {"expert_flops_per_token", m.expert_flops_per_token},
      {"bytes_per_element", m.bytes_per_element},
      {"pre_attention_flops_fraction", m.pre_attention_flops_fraction},
      {"router_flops_per_token", m.router_flops_per_token},
      {"attn_activation_bytes_per_token", m.attn_activation_bytes_per_token},
      {"expert_activation_bytes_per_token", m.expert_activation_bytes_per_token},
      {"kv_upproject_factor", m.kv_upproject_factor},
  };
}

const json& preset_document(std::string_view name) {
  const json& all = presets();
  auto it = all.find(std::string(name));
  if (it == all.end()) {
    throw Error(ErrorCode::kUnknownPreset, std::string(name),
                "unknown model preset '" + std::string(name) + "'");
  }
  return *it;
}

ModelSpec preset(std::string_view name) { return load_model_spec(preset_document(name)); }

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"mixtral-8x7b", "mixtral-8x22b",
                                                 "deepseek-v2-like", "tiny-test"};
  return names;
}

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kNonPositiveValue: return "NonPositiveValue";
    case ErrorCode::kTopKExceedsExperts: return "TopKExceedsExperts";
    case ErrorCode::kUnknownPreset: return "UnknownPreset";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kNonMonotoneLatency: return "NonMonotoneLatency";
    case ErrorCode::kUnknownModuleKind: return "UnknownModuleKind";
    case ErrorCode::kUnreachable: return "Unreachable";
    case ErrorCode::kNoFeasibleB: return "NoFeasibleB";
    case ErrorCode::kInfeasiblePlan: return "InfeasiblePlan";
    case ErrorCode::kCycleIntroduced: return "CycleIntroduced";
    case ErrorCode::kCyclicGraph: return "CyclicGraph";
    case ErrorCode::kEmptySearchSpace: return "EmptySearchSpace";
    case ErrorCode::kInfeasiblePolicy: return "InfeasiblePolicy";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace moeplan
