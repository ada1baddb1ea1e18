// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace moeplan {

enum class ErrorCode {
  kMissingField,
  kNonPositiveValue,
  kTopKExceedsExperts,
  kUnknownPreset,
  kSchemaError,
  kNonMonotoneLatency,
  kUnknownModuleKind,
  kUnreachable,
  kNoFeasibleB,
  kInfeasiblePlan,
  kCycleIntroduced,
  kCyclicGraph,
  kEmptySearchSpace,
  kInfeasiblePolicy,
  kInvalidArgument,
};

std::string_view error_code_name(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code and,
/// where applicable, the offending field or entity.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string subject, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        subject_(std::move(subject)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  ErrorCode code_;
  std::string subject_;
};

}  // namespace moeplan
