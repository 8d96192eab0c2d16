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

#include "qft/error.hpp"

#include <atomic>
#include <iostream>

namespace qft {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kUnknownOp: return "unknown op";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kSchema: return "schema violation";
    case ErrorCode::kDanglingEdge: return "dangling edge";
    case ErrorCode::kCycle: return "cycle";
    case ErrorCode::kUnsupportedLayer: return "unsupported layer";
    case ErrorCode::kConflictingConstraints: return "conflicting constraints";
    case ErrorCode::kDegenerateSlice: return "degenerate slice";
    case ErrorCode::kNonPositiveScale: return "nonpositive scale";
    case ErrorCode::kRangeViolation: return "range violation";
    case ErrorCode::kOverflow: return "accumulator overflow";
    case ErrorCode::kNonHomogeneous: return "non-homogeneous interface";
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kNumeric: return "numeric failure";
    case ErrorCode::kIo: return "io error";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

namespace {

void stderr_sink(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

std::atomic<WarningSink> g_sink{&stderr_sink};

}  // namespace

void warn(const std::string& message) { g_sink.load()(message); }

WarningSink set_warning_sink(WarningSink sink) {
  return g_sink.exchange(sink ? sink : &stderr_sink);
}

}  // namespace qft
