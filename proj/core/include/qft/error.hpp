/*
 * Copyright 2026 The qft Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qft {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kUnknownOp,
  kNonFinite,
  kSchema,
  kDanglingEdge,
  kCycle,
  kUnsupportedLayer,
  kConflictingConstraints,
  kDegenerateSlice,
  kNonPositiveScale,
  kRangeViolation,
  kOverflow,
  kNonHomogeneous,
  kNotFound,
  kNumeric,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` distinguishes failure
/// classes so callers (the CLI in particular) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

/// Warnings go through one sink so tests can capture them.
void warn(const std::string& message);

using WarningSink = void (*)(const std::string&);
WarningSink set_warning_sink(WarningSink sink);

}  // namespace qft
