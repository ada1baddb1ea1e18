// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace moeplan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNoPlan = 3;

/// Runs one command line (without argv[0]). Reports go under --out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace moeplan::cli
