// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace moeplan {

using Bytes = std::int64_t;
using Flops = double;

/// Affine attention FLOPs per token: projections plus a context-dependent
/// attention mechanism term.
struct AttentionFlops {
  Flops a0 = 0.0;  // projections (pre + post attention)
  Flops a1 = 0.0;  // mechanism, per context token

  Flops at(std::int64_t context_len) const {
    return a0 + a1 * static_cast<double>(context_len);
  }
  bool operator==(const AttentionFlops&) const = default;
};

/// Static geometry of an MoE transformer. All byte quantities are per layer
/// unless the name says otherwise.
struct ModelSpec {
  std::string name;
  std::int64_t num_layers = 0;
  std::int64_t experts_per_layer = 0;
  std::int64_t top_k = 0;
  Bytes shared_expert_bytes = 0;
  Bytes attention_weights_bytes = 0;
  Bytes expert_bytes = 0;
  Bytes kv_bytes_per_token_layer = 0;
  Bytes hidden_bytes_per_token = 0;
  AttentionFlops attn_flops_per_token;
  Flops expert_flops_per_token = 0.0;

  // Optional coefficients; documents may omit them and get these defaults
  // (filled in by load_model_spec).
  std::int64_t bytes_per_element = 2;
  double pre_attention_flops_fraction = 0.5;
  Flops router_flops_per_token = 0.0;          // default 2 * hidden_dim * E
  Bytes attn_activation_bytes_per_token = 0;   // default 2 * hidden bytes
  Bytes expert_activation_bytes_per_token = 0; // default 2 * hidden bytes
  double kv_upproject_factor = 1.0;

  Bytes dense_bytes_per_layer() const {
    return attention_weights_bytes + shared_expert_bytes;
  }
  Bytes routed_bytes_per_layer() const {
    return experts_per_layer * expert_bytes;
  }
  Bytes model_bytes() const {
    return num_layers * (dense_bytes_per_layer() + routed_bytes_per_layer());
  }
  Bytes kv_bytes_per_token() const {
    return num_layers * kv_bytes_per_token_layer;
  }
  std::int64_t total_experts() const { return num_layers * experts_per_layer; }

  Flops attn_mechanism_flops_per_token(std::int64_t context_len) const {
    return attn_flops_per_token.a1 * static_cast<double>(context_len);
  }
  Flops pre_attention_flops_per_token() const {
    return attn_flops_per_token.a0 * pre_attention_flops_fraction;
  }
  Flops post_attention_flops_per_token() const {
    return attn_flops_per_token.a0 * (1.0 - pre_attention_flops_fraction);
  }

  bool operator==(const ModelSpec&) const = default;
};

/// Validates a structured document and returns the spec with defaults filled.
/// Throws Error{kMissingField | kNonPositiveValue | kTopKExceedsExperts}.
ModelSpec load_model_spec(const nlohmann::json& document);

nlohmann::json to_json(const ModelSpec& model);

/// Built-in presets: mixtral-8x7b, mixtral-8x22b, deepseek-v2-like, tiny-test.
ModelSpec preset(std::string_view name);
const std::vector<std::string>& preset_names();
/// The embedded document a preset is loaded from.
const nlohmann::json& preset_document(std::string_view name);

}  // namespace moeplan
