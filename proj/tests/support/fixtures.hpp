// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "moeplan/moeplan.hpp"

namespace moeplan::testing {

inline Profile synth(const std::string& hw_preset, const ModelSpec& model) {
  Profile p;
  p.hardware = hardware_preset(hw_preset);
  p.tables = synth_profile(p.hardware, model);
  return p;
}

inline WorkloadSpec workload(std::int64_t prompt, std::int64_t decode, Phase phase,
                             std::int64_t num_sequences = 1) {
  WorkloadSpec w;
  w.prompt_len = prompt;
  w.decode_len = decode;
  w.num_sequences = num_sequences;
  w.phase = phase;
  return w;
}

inline BatchingPlan plan(std::int64_t B, std::int64_t b_a, std::int64_t b_e, double omega,
                         Bytes s_expert, Bytes s_params = 0) {
  return BatchingPlan{B, b_a, b_e, omega, s_expert, s_params};
}

/// Minimal valid model document: 1 layer, 2 experts, top-1, unit byte sizes.
inline nlohmann::json unit_model_document() {
  return {{"name", "unit"},
          {"num_layers", 1},
          {"experts_per_layer", 2},
          {"top_k", 1},
          {"shared_expert_bytes", 0},
          {"attention_weights_bytes", 1},
          {"expert_bytes", 1},
          {"kv_bytes_per_token_layer", 1},
          {"hidden_bytes_per_token", 1},
          {"attn_flops_per_token", {{"a0", 1}, {"a1", 1}}},
          {"expert_flops_per_token", 1}};
}

}  // namespace moeplan::testing
