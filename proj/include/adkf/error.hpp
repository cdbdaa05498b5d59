/*
 * Copyright 2026 The adkf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
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

namespace adkf {

enum class ErrorCode {
  kDimensionMismatch,
  kNotPositiveDefinite,
  kNegativeCounts,
  kTooFewPoints,
  kEmptyLayout,
  kTraceMismatch,
  kUnconvergedInnerSolve,
  kHessianSingular,
  kEmptyMetadataset,
  kShapeMismatch,
  kDegenerateTask,
  kInfeasibleStratification,
  kMalformedRecord,
  kVersionMismatch,
  kSingleClassQuery,
  kZeroDenominator,
  kTooFewNonZero,
  kNegativeStd,
  kBudgetExceedsPool,
  kInvalidArgument,
  kConfigParse,
  kIo,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::kNegativeCounts: return "NegativeCounts";
    case ErrorCode::kTooFewPoints: return "TooFewPoints";
    case ErrorCode::kEmptyLayout: return "EmptyLayout";
    case ErrorCode::kTraceMismatch: return "TraceMismatch";
    case ErrorCode::kUnconvergedInnerSolve: return "UnconvergedInnerSolve";
    case ErrorCode::kHessianSingular: return "HessianSingular";
    case ErrorCode::kEmptyMetadataset: return "EmptyMetadataset";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDegenerateTask: return "DegenerateTask";
    case ErrorCode::kInfeasibleStratification: return "InfeasibleStratification";
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kSingleClassQuery: return "SingleClassQuery";
    case ErrorCode::kZeroDenominator: return "ZeroDenominator";
    case ErrorCode::kTooFewNonZero: return "TooFewNonZero";
    case ErrorCode::kNegativeStd: return "NegativeStd";
    case ErrorCode::kBudgetExceedsPool: return "BudgetExceedsPool";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfigParse: return "ConfigParse";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace adkf
