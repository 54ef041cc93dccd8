// Copyright 2026 The Pacmac Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pacmac/error.hpp"

namespace pacmac {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kInvalidAttribute: return "InvalidAttribute";
    case ErrorCode::kNotScalar: return "NotScalar";
    case ErrorCode::kUntrackedRoot: return "UntrackedRoot";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kInvalidMaskConfig: return "InvalidMaskConfig";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kCommitteeSizeMismatch: return "CommitteeSizeMismatch";
    case ErrorCode::kOracleWithoutLabel: return "OracleWithoutLabel";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kCorruptManifest: return "CorruptManifest";
    case ErrorCode::kMagicMismatch: return "MagicMismatch";
    case ErrorCode::kTruncatedPayload: return "TruncatedPayload";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kEmptyGroup: return "EmptyGroup";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kUnknownKey: return "UnknownKey";
    case ErrorCode::kTypeError: return "TypeError";
    case ErrorCode::kFileNotFound: return "FileNotFound";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kUnknownCommand: return "UnknownCommand";
  }
  return "UnknownError";
}

}  // namespace pacmac
