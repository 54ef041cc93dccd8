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

#include "pacmac/reliability.hpp"

#include "pacmac/error.hpp"

namespace pacmac::reliability {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kAll: return "all";
    case Strategy::kConfident: return "confident";
    case Strategy::kConsistent: return "consistent";
    case Strategy::kConsistentAndConfident: return "consistent_and_confident";
    case Strategy::kConsistentOrConfident: return "consistent_or_confident";
    case Strategy::kOracle: return "oracle";
  }
  return "?";
}

std::string_view to_string(Voting v) { return v == Voting::kUnanimous ? "unanimous" : "majority"; }

std::string_view to_string(MaskingMode m) {
  return m == MaskingMode::kAttention ? "attention" : "random";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : kAllStrategies)
    if (to_string(s) == name) return s;
  fail(ErrorCode::kInvalidConfig, "unknown selection strategy '" + std::string(name) + "'");
}

Voting parse_voting(std::string_view name) {
  if (name == "unanimous") return Voting::kUnanimous;
  if (name == "majority") return Voting::kMajority;
  fail(ErrorCode::kInvalidConfig, "unknown voting mode '" + std::string(name) + "'");
}

MaskingMode parse_masking(std::string_view name) {
  if (name == "attention") return MaskingMode::kAttention;
  if (name == "random") return MaskingMode::kRandom;
  fail(ErrorCode::kInvalidConfig, "unknown masking mode '" + std::string(name) + "'");
}

void SelectionConfig::validate() const {
  if (committee == 0) fail(ErrorCode::kInvalidConfig, "committee size must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0))
    fail(ErrorCode::kInvalidConfig, "confidence threshold must lie in (0, 1)");
  if (!(ratio >= 0.0 && ratio < 1.0))
    fail(ErrorCode::kInvalidConfig, "masking ratio must lie in [0, 1)");
}

ReliabilityVerdict assess_reliability(int clean_prediction, double clean_confidence,
                                      std::span<const int> masked_predictions,
                                      const SelectionConfig& config,
                                      std::optional<int> true_label) {
  config.validate();
  const std::size_t k = config.committee;
  if (masked_predictions.size() != k)
    fail(ErrorCode::kCommitteeSizeMismatch,
         "expected " + std::to_string(k) + " masked views, got " +
             std::to_string(masked_predictions.size()));
  if (config.strategy == Strategy::kOracle && !true_label)
    fail(ErrorCode::kOracleWithoutLabel, "oracle selection requires the true label");

  ReliabilityVerdict v;
  v.pseudolabel = clean_prediction;
  v.confidence = clean_confidence;
  v.agreement.resize(k);
  std::size_t agree = 0;
  int last_agreeing = kNoTrainingView;
  for (std::size_t i = 0; i < k; ++i) {
    v.agreement[i] = masked_predictions[i] == clean_prediction ? 1 : 0;
    if (v.agreement[i]) {
      ++agree;
      last_agreeing = static_cast<int>(i);
    }
  }
  v.consistent = config.voting == Voting::kUnanimous ? agree == k : 2 * agree > k;
  v.confident = clean_confidence > config.threshold;
  switch (config.strategy) {
    case Strategy::kAll: v.reliable = true; break;
    case Strategy::kConfident: v.reliable = v.confident; break;
    case Strategy::kConsistent: v.reliable = v.consistent; break;
    case Strategy::kConsistentAndConfident: v.reliable = v.consistent && v.confident; break;
    case Strategy::kConsistentOrConfident: v.reliable = v.consistent || v.confident; break;
    case Strategy::kOracle: v.reliable = clean_prediction == *true_label; break;
  }
  if (v.reliable)
    v.training_view = last_agreeing != kNoTrainingView ? last_agreeing : static_cast<int>(k) - 1;
  return v;
}

ReliabilityVerdict assess_reliability(const vit::ForwardResult& clean,
                                      std::span<const vit::ForwardResult> masked,
                                      const SelectionConfig& config,
                                      std::optional<int> true_label) {
  std::vector<int> preds;
  preds.reserve(masked.size());
  for (const auto& m : masked) preds.push_back(m.prediction());
  return assess_reliability(clean.prediction(), clean.confidence(), preds, config, true_label);
}

namespace {

void finish(double& precision, double& recall, double& f1, std::size_t selected,
            std::size_t correct, std::size_t selected_correct) {
  precision = selected ? static_cast<double>(selected_correct) / static_cast<double>(selected) : 0.0;
  recall = correct ? static_cast<double>(selected_correct) / static_cast<double>(correct) : 0.0;
  f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

}  // namespace

SelectionStats selection_stats(std::span<const ReliabilityVerdict> verdicts,
                               std::span<const int> true_labels, int num_classes) {
  if (verdicts.size() != true_labels.size())
    fail(ErrorCode::kLengthMismatch, "selection_stats: " + std::to_string(verdicts.size()) +
                                         " verdicts vs " + std::to_string(true_labels.size()) +
                                         " labels");
  SelectionStats s;
  s.per_class.resize(static_cast<std::size_t>(std::max(num_classes, 0)));
  s.total = verdicts.size();
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const bool good = verdicts[i].pseudolabel == true_labels[i];
    const bool sel = verdicts[i].reliable;
    s.selected += sel;
    s.correct += good;
    s.selected_correct += sel && good;
    const int label = true_labels[i];
    if (label >= 0 && label < num_classes) {
      ClassSelection& c = s.per_class[static_cast<std::size_t>(label)];
      ++c.total;
      c.selected += sel;
      c.correct += good;
      c.selected_correct += sel && good;
    }
  }
  finish(s.precision, s.recall, s.f1, s.selected, s.correct, s.selected_correct);
  s.precision_defined = s.selected > 0;
  s.recall_defined = s.correct > 0;
  s.fraction_selected =
      s.total ? static_cast<double>(s.selected) / static_cast<double>(s.total) : 0.0;
  for (auto& c : s.per_class) finish(c.precision, c.recall, c.f1, c.selected, c.correct, c.selected_correct);
  return s;
}

nlohmann::json verdict_to_json(std::size_t id, const ReliabilityVerdict& verdict) {
  return {{"id", id},
          {"pseudolabel", verdict.pseudolabel},
          {"confidence", verdict.confidence},
          {"agreement", verdict.agreement},
          {"reliable", verdict.reliable ? 1 : 0},
          {"view", verdict.training_view}};
}

}  // namespace pacmac::reliability
