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

#pragma once

#include <stdexcept>
#include <string>

namespace pacmac {

/// Failure categories raised by the library. The numeric values are mirrored
/// by the C API status codes in pacmac.h and must stay in sync with them.
enum class ErrorCode : int {
  kShapeMismatch = 1,
  kInvalidAttribute = 2,
  kNotScalar = 3,
  kUntrackedRoot = 4,
  kNonFinite = 5,
  kInvalidConfig = 6,
  kInvalidMaskConfig = 7,
  kLengthMismatch = 8,
  kCommitteeSizeMismatch = 9,
  kOracleWithoutLabel = 10,
  kEmptyDataset = 11,
  kEmptyBatch = 12,
  kInvalidSpec = 13,
  kCorruptManifest = 14,
  kMagicMismatch = 15,
  kTruncatedPayload = 16,
  kEmptyInput = 17,
  kDimensionMismatch = 18,
  kInsufficientData = 19,
  kZeroVariance = 20,
  kEmptyGroup = 21,
  kOutOfRange = 22,
  kUnknownKey = 23,
  kTypeError = 24,
  kFileNotFound = 25,
  kIoError = 26,
  kUnknownCommand = 27,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace pacmac
