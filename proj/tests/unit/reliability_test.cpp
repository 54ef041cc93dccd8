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

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pacmac/error.hpp"
#include "pacmac/reliability.hpp"

namespace pacmac::reliability {
namespace {

SelectionConfig make(Strategy s, Voting v, std::size_t k, double threshold = 0.5) {
  SelectionConfig c;
  c.strategy = s;
  c.voting = v;
  c.committee = k;
  c.threshold = threshold;
  return c;
}

// Every prediction pattern for C <= 4 and k <= 3, three confidence levels
// around the threshold, every label, both voting modes, every strategy.
TEST(Reliability, ExhaustiveTruthTable) {
  std::size_t checked = 0;
  for (int classes = 2; classes <= 4; ++classes)
    for (std::size_t k = 1; k <= 3; ++k) {
      std::size_t patterns = 1;
      for (std::size_t j = 0; j < k; ++j) patterns *= static_cast<std::size_t>(classes);
      for (Strategy s : kAllStrategies)
        for (Voting v : {Voting::kUnanimous, Voting::kMajority})
          for (int pred = 0; pred < classes; ++pred)
            for (std::size_t pat = 0; pat < patterns; ++pat) {
              std::vector<int> masked(k);
              std::size_t rest = pat;
              for (std::size_t j = 0; j < k; ++j) {
                masked[j] = static_cast<int>(rest % static_cast<std::size_t>(classes));
                rest /= static_cast<std::size_t>(classes);
              }
              for (double conf : {0.3, 0.5, 0.8})
                for (int label = 0; label < classes; ++label) {
                  const auto got = assess_reliability(pred, conf, masked, make(s, v, k), label);
                  const auto want =
                      pacmac::testing::oracle_reliability(pred, conf, masked, s, v, 0.5, label);
                  ASSERT_EQ(got.reliable, want.reliable);
                  ASSERT_EQ(got.consistent, want.consistent);
                  ASSERT_EQ(got.confident, want.confident);
                  ASSERT_EQ(got.training_view, want.training_view);
                  ++checked;
                }
            }
    }
  EXPECT_GT(checked, 10000u);
}

TEST(Reliability, ConfidenceAtThresholdIsNotConfident) {
  const auto v = assess_reliability(1, 0.5, std::vector<int>{0, 0},
                                    make(Strategy::kConfident, Voting::kUnanimous, 2));
  EXPECT_FALSE(v.confident);
  EXPECT_FALSE(v.reliable);
  EXPECT_EQ(v.training_view, kNoTrainingView);
}

TEST(Reliability, MajorityNeedsStrictlyMoreThanHalf) {
  const auto cfg = make(Strategy::kConsistent, Voting::kMajority, 2);
  EXPECT_FALSE(assess_reliability(1, 0.2, std::vector<int>{1, 0}, cfg).reliable);
  const auto cfg3 = make(Strategy::kConsistent, Voting::kMajority, 3);
  EXPECT_TRUE(assess_reliability(1, 0.2, std::vector<int>{1, 0, 1}, cfg3).reliable);
}

TEST(Reliability, AgreementVectorAndLastAgreeingView) {
  const auto v = assess_reliability(2, 0.9, std::vector<int>{2, 1, 2},
                                    make(Strategy::kConsistentOrConfident, Voting::kMajority, 3));
  EXPECT_EQ(v.agreement, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(v.training_view, 2);
}

TEST(Reliability, CommitteeSizeMismatch) {
  try {
    assess_reliability(0, 0.9, std::vector<int>{0}, make(Strategy::kAll, Voting::kUnanimous, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCommitteeSizeMismatch);
  }
}

TEST(Reliability, OracleNeedsLabel) {
  try {
    assess_reliability(0, 0.9, std::vector<int>{0, 0}, make(Strategy::kOracle, Voting::kUnanimous, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOracleWithoutLabel);
  }
}

TEST(Reliability, ParseNamesRoundTrip) {
  for (Strategy s : kAllStrategies) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_EQ(parse_voting("majority"), Voting::kMajority);
  EXPECT_EQ(parse_masking("random"), MaskingMode::kRandom);
  try {
    parse_strategy("sometimes");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
  }
}

TEST(Reliability, SelectionStatsCounts) {
  std::vector<ReliabilityVerdict> v(4);
  v[0].pseudolabel = 0, v[0].reliable = true;   // right, selected
  v[1].pseudolabel = 1, v[1].reliable = true;   // wrong, selected
  v[2].pseudolabel = 1, v[2].reliable = false;  // right, dropped
  v[3].pseudolabel = 0, v[3].reliable = false;  // wrong, dropped
  const std::vector<int> truth = {0, 0, 1, 1};
  const auto s = selection_stats(v, truth, 2);
  EXPECT_DOUBLE_EQ(s.precision, 0.5);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
  EXPECT_DOUBLE_EQ(s.fraction_selected, 0.5);
  EXPECT_TRUE(s.precision_defined);
  EXPECT_EQ(s.per_class[0].selected, 2u);
}

TEST(Reliability, EmptySelectionHasUndefinedPrecision) {
  std::vector<ReliabilityVerdict> v(2);
  const auto s = selection_stats(v, std::vector<int>{0, 1}, 2);
  EXPECT_FALSE(s.precision_defined);
  EXPECT_EQ(s.precision, 0.0);
}

TEST(Reliability, VerdictJson) {
  ReliabilityVerdict v;
  v.pseudolabel = 3;
  v.confidence = 0.75;
  v.agreement = {1, 0};
  v.reliable = true;
  v.training_view = 0;
  const auto j = verdict_to_json(9, v);
  EXPECT_EQ(j.at("id"), 9);
  EXPECT_EQ(j.at("pseudolabel"), 3);
  EXPECT_EQ(j.at("reliable"), 1);
  EXPECT_EQ(j.at("view"), 0);
}

}  // namespace
}  // namespace pacmac::reliability
