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

// Reliability of a pseudolabel from masked-view consistency and clean-image
// confidence, plus precision/recall bookkeeping for the selection.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pacmac/vit.hpp"

namespace pacmac::reliability {

enum class Strategy {
  kAll,
  kConfident,
  kConsistent,
  kConsistentAndConfident,
  kConsistentOrConfident,
  kOracle,
};

enum class Voting { kUnanimous, kMajority };

enum class MaskingMode { kAttention, kRandom };

inline constexpr Strategy kAllStrategies[] = {
    Strategy::kAll,        Strategy::kConfident,
    Strategy::kConsistent, Strategy::kConsistentAndConfident,
    Strategy::kConsistentOrConfident, Strategy::kOracle,
};

std::string_view to_string(Strategy s);
std::string_view to_string(Voting v);
std::string_view to_string(MaskingMode m);
/// Throw InvalidConfig on unknown names.
Strategy parse_strategy(std::string_view name);
Voting parse_voting(std::string_view name);
MaskingMode parse_masking(std::string_view name);

struct SelectionConfig {
  Strategy strategy = Strategy::kConsistentOrConfident;
  Voting voting = Voting::kUnanimous;
  std::size_t committee = 2;
  double ratio = 0.75;
  double threshold = 0.5;
  MaskingMode masking = MaskingMode::kAttention;

  void validate() const;
};

inline constexpr int kNoTrainingView = -1;

struct ReliabilityVerdict {
  int pseudolabel = 0;
  double confidence = 0.0;
  std::vector<std::uint8_t> agreement;
  bool consistent = false;
  bool confident = false;
  bool reliable = false;
  /// Masked view that feeds the self-training loss, kNoTrainingView when the
  /// instance is not reliable.
  int training_view = kNoTrainingView;
};

/// Pure decision on predictions. masked_predictions.size() must equal the
/// committee size (CommitteeSizeMismatch); the oracle strategy needs a label
/// (OracleWithoutLabel).
ReliabilityVerdict assess_reliability(int clean_prediction, double clean_confidence,
                                      std::span<const int> masked_predictions,
                                      const SelectionConfig& config,
                                      std::optional<int> true_label = std::nullopt);

ReliabilityVerdict assess_reliability(const vit::ForwardResult& clean,
                                      std::span<const vit::ForwardResult> masked,
                                      const SelectionConfig& config,
                                      std::optional<int> true_label = std::nullopt);

struct ClassSelection {
  std::size_t total = 0;
  std::size_t selected = 0;
  std::size_t correct = 0;           // pseudolabel == truth
  std::size_t selected_correct = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct SelectionStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fraction_selected = 0.0;
  /// False when nothing was selected; precision is then reported as 0.
  bool precision_defined = false;
  /// False when no pseudolabel was correct; recall is then reported as 0.
  bool recall_defined = false;
  std::size_t total = 0;
  std::size_t selected = 0;
  std::size_t correct = 0;
  std::size_t selected_correct = 0;
  /// Indexed by true label.
  std::vector<ClassSelection> per_class;
};

/// Throws LengthMismatch when the lists are not aligned.
SelectionStats selection_stats(std::span<const ReliabilityVerdict> verdicts,
                               std::span<const int> true_labels, int num_classes);

/// {id, pseudolabel, confidence, agreement, reliable, view}
nlohmann::json verdict_to_json(std::size_t id, const ReliabilityVerdict& verdict);

}  // namespace pacmac::reliability
