// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

namespace moeplan {

enum class Phase { kPrefill, kDecode };

std::string_view phase_name(Phase phase);
/// Parses "prefill" / "decode"; throws Error{kSchemaError} otherwise.
Phase parse_phase(std::string_view text);

}  // namespace moeplan
