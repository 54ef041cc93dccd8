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

#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pacmac/error.hpp"
#include "pacmac/metrics.hpp"

namespace pacmac::metrics {
namespace {

template <typename Fn>
void expect_error(ErrorCode code, Fn&& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected " << error_code_name(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

TEST(Accuracy, CountsOverallAndPerClass) {
  const auto r = accuracy(std::vector<int>{0, 1, 1}, std::vector<int>{0, 1, 0}, 3);
  EXPECT_DOUBLE_EQ(r.overall, 2.0 / 3.0);
  ASSERT_TRUE(r.per_class[0].has_value());
  EXPECT_DOUBLE_EQ(*r.per_class[0], 0.5);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 1.0);
  EXPECT_FALSE(r.per_class[2].has_value());
}

TEST(Accuracy, AllCorrect) {
  EXPECT_DOUBLE_EQ(accuracy(std::vector<int>{2, 0}, std::vector<int>{2, 0}, 3).overall, 1.0);
}

TEST(Accuracy, Errors) {
  expect_error(ErrorCode::kLengthMismatch,
               [] { accuracy(std::vector<int>{0}, std::vector<int>{0, 1}, 2); });
  expect_error(ErrorCode::kEmptyInput, [] { accuracy({}, {}, 2); });
}

TEST(Ece, TwoSamplesOneBin) {
  const auto r = ece(std::vector<double>{0.8, 0.8}, std::vector<std::uint8_t>{1, 0});
  EXPECT_NEAR(r.ece, 0.3, 1e-12);
}

TEST(Ece, PerfectCases) {
  EXPECT_DOUBLE_EQ(ece(std::vector<double>{1.0, 1.0}, std::vector<std::uint8_t>{1, 1}).ece, 0.0);
  EXPECT_DOUBLE_EQ(ece(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1, 0}).ece, 0.0);
}

TEST(Ece, BinBoundaries) {
  EXPECT_EQ(ece_bin_index(0.0, 10), 0u);
  EXPECT_EQ(ece_bin_index(0.1, 10), 0u);
  EXPECT_EQ(ece_bin_index(0.1000001, 10), 1u);
  EXPECT_EQ(ece_bin_index(1.0, 10), 9u);
  EXPECT_EQ(ece_bin_index(2.0 / 15.0, 15), 1u);
}

TEST(Ece, WeightsSumToOne) {
  std::mt19937_64 rng(4);
  const auto c = pacmac::testing::uniform_values(200, rng, 0.0, 1.0);
  std::vector<std::uint8_t> ok(200);
  for (auto& o : ok) o = rng() % 2;
  const auto r = ece(c, ok);
  double total = 0.0, recomposed = 0.0;
  for (const auto& b : r.bins) {
    total += b.weight;
    recomposed += b.weight * std::abs(b.accuracy - b.mean_confidence);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(recomposed, r.ece);
}

TEST(Ece, MatchesPerSampleOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    const std::size_t bins = 1 + rng() % 20;
    auto c = pacmac::testing::uniform_values(n, rng, 0.0, 1.0);
    // Exact boundaries and endpoints.
    c[0] = static_cast<double>(rng() % (bins + 1)) / static_cast<double>(bins);
    std::vector<std::uint8_t> ok(n);
    for (auto& o : ok) o = rng() % 2;
    EXPECT_EQ(ece(c, ok, bins).ece, pacmac::testing::oracle_ece(c, ok, bins));
  }
}

TEST(Ece, Errors) {
  expect_error(ErrorCode::kEmptyInput, [] { ece({}, {}); });
  expect_error(ErrorCode::kOutOfRange,
               [] { ece(std::vector<double>{1.5}, std::vector<std::uint8_t>{1}); });
  expect_error(ErrorCode::kInvalidAttribute,
               [] { ece(std::vector<double>{0.5}, std::vector<std::uint8_t>{1}, 0); });
}

TEST(Knn, IdenticalPointTakesItsLabel) {
  const Features s = {{0, 0}, {5, 5}};
  const auto r = knn_cross_domain(s, std::vector<int>{3, 1}, Features{{5, 5}}, std::vector<int>{1}, 1);
  EXPECT_EQ(r.predictions[0], 1);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
}

TEST(Knn, NearestOfThree) {
  const Features s = {{0, 0}, {1, 0}, {0, 1}};
  const auto r = knn_cross_domain(s, std::vector<int>{0, 0, 1}, Features{{0.9, 0.1}},
                                  std::vector<int>{0}, 1);
  EXPECT_EQ(r.predictions[0], 0);
}

TEST(Knn, VoteTieGoesToCloserGroup) {
  // Two votes each; label 1's neighbours are closer in total.
  const Features s = {{1.0}, {1.2}, {-0.5}, {-0.6}};
  const auto r = knn_cross_domain(s, std::vector<int>{0, 0, 1, 1}, Features{{0.0}},
                                  std::vector<int>{1}, 4);
  EXPECT_EQ(r.predictions[0], 1);
}

TEST(Knn, MatchesAllPairsOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t ns = 10 + rng() % 100, nt = 10 + rng() % 100, dim = 1 + rng() % 6;
    Features s(ns), t(nt);
    std::vector<int> sl(ns), tl(nt);
    for (auto& x : s) x = pacmac::testing::uniform_values(dim, rng);
    for (auto& x : t) x = pacmac::testing::uniform_values(dim, rng);
    // Coarse grid so exact ties actually happen.
    for (auto* f : {&s, &t})
      for (auto& x : *f)
        for (double& v : x) v = std::round(v * 4.0) / 4.0;
    for (int& l : sl) l = static_cast<int>(rng() % 4);
    for (int& l : tl) l = static_cast<int>(rng() % 4);
    const std::size_t k = 1 + rng() % 9;
    EXPECT_EQ(knn_cross_domain(s, sl, t, tl, k).predictions,
              pacmac::testing::oracle_knn(s, sl, t, k));
  }
}

TEST(Knn, Errors) {
  expect_error(ErrorCode::kDimensionMismatch, [] {
    knn_cross_domain(Features{{0, 0}}, std::vector<int>{0}, Features{{0}}, std::vector<int>{0}, 1);
  });
  expect_error(ErrorCode::kInvalidAttribute, [] {
    knn_cross_domain(Features{{0}}, std::vector<int>{0}, Features{{0}}, std::vector<int>{0}, 2);
  });
}

TEST(DaScore, ReportedProbeRow) {
  EXPECT_NEAR(da_score(8.5, 2.6, 1.0), 5.9, 1e-9);
  EXPECT_DOUBLE_EQ(da_score(3.0, 3.0, 1.0), 0.0);
  const auto r = da_report_from_errors(40.0, 8.5, 2.6, 1.0);
  EXPECT_EQ(r.da_score, r.c3 - std::max(r.c4, r.c5));
}

TEST(DaScore, IdenticalDomainsAreIndistinguishable) {
  std::mt19937_64 rng(12);
  Features f;
  std::vector<int> domains, classes;
  for (int d = 0; d < 2; ++d)
    for (int i = 0; i < 200; ++i) {
      const int c = i % 2;
      auto x = pacmac::testing::uniform_values(4, rng, -0.3, 0.3);
      x[0] += c == 0 ? -2.0 : 2.0;
      f.push_back(x);
      domains.push_back(d);
      classes.push_back(c);
    }
  const auto r = da_score_probe(f, domains, classes, 3);
  EXPECT_NEAR(r.c2, 50.0, 12.0);
  EXPECT_LT(r.c4, 5.0);
  EXPECT_EQ(r.da_score, r.c3 - std::max(r.c4, r.c5));
}

TEST(DaScore, NeedsTwoSharedClasses) {
  const Features f = {{0}, {1}, {2}, {3}};
  expect_error(ErrorCode::kInsufficientData, [&] {
    da_score_probe(f, std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 0, 0, 0}, 1);
  });
}

TEST(Pearson, ExactLinearData) {
  std::mt19937_64 rng(2);
  const auto x = pacmac::testing::uniform_values(50, rng);
  std::vector<double> up, down;
  for (double v : x) {
    up.push_back(2.0 * v + 1.0);
    down.push_back(-v);
  }
  EXPECT_NEAR(pearson(x, up), 1.0, 1e-12);
  EXPECT_NEAR(pearson(x, down), -1.0, 1e-12);
}

TEST(Pearson, SmallClosedForm) {
  EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}), 0.5, 1e-9);
}

TEST(Pearson, AgreesWithTextbookFormula) {
  std::mt19937_64 rng(5);
  const auto x = pacmac::testing::uniform_values(40, rng);
  const auto y = pacmac::testing::uniform_values(40, rng);
  EXPECT_NEAR(pearson(x, y), pacmac::testing::oracle_pearson(x, y), 1e-12);
}

TEST(Pearson, Errors) {
  expect_error(ErrorCode::kZeroVariance,
               [] { pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}); });
  expect_error(ErrorCode::kInsufficientData,
               [] { pearson(std::vector<double>{1}, std::vector<double>{1}); });
  expect_error(ErrorCode::kLengthMismatch,
               [] { pearson(std::vector<double>{1, 2}, std::vector<double>{1}); });
}

TEST(DistanceHistogram, CsvHeaderAndRows) {
  DistanceReport r;
  r.histogram = {{0.0, 2, 1}, {0.5, 0, 3}};
  EXPECT_EQ(r.histogram_csv(), "bin_left,count_correct,count_incorrect\n0,2,1\n0.5,0,3\n");
}

}  // namespace
}  // namespace pacmac::metrics
