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

#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pacmac/error.hpp"
#include "pacmac/masking.hpp"

namespace pacmac::masking {
namespace {

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

TEST(Masking, EightPatchWorkedExample) {
  const std::vector<double> attention = {0.5, 0.1, 0.3, 0.05, 0.02, 0.01, 0.015, 0.005};
  const MaskSet m = attention_conditioned_masks(attention, 0.5, 2);
  ASSERT_EQ(m.kept.size(), 2u);
  EXPECT_EQ(sorted(m.kept[0]), (std::vector<std::size_t>{0, 1, 4, 5}));
  EXPECT_EQ(sorted(m.kept[1]), (std::vector<std::size_t>{2, 3, 6, 7}));
  // Pop order follows the attention ranking.
  EXPECT_EQ(m.kept[0], (std::vector<std::size_t>{0, 1, 4, 5}));
  EXPECT_EQ(m.kept[1], (std::vector<std::size_t>{2, 3, 6, 7}));
}

TEST(Masking, SingleFullMaskIsIdentity) {
  const std::vector<double> attention = {0.1, 0.7, 0.2, 0.0};
  const MaskSet m = attention_conditioned_masks(attention, 0.0, 1);
  EXPECT_EQ(m.masks[0], (std::vector<std::uint8_t>{1, 1, 1, 1}));
  std::mt19937_64 rng(1);
  const std::vector<double> image = pacmac::testing::uniform_values(3 * 8 * 8, rng);
  EXPECT_EQ(apply_mask(image, 3, 8, m.masks[0], 4), image);
}

TEST(Masking, DefaultCommitteeOnLargeGrid) {
  std::mt19937_64 rng(5);
  const MaskSet m = attention_conditioned_masks(pacmac::testing::uniform_values(196, rng, 0, 1), 0.75, 2);
  EXPECT_EQ(m.kept[0].size(), 49u);
  EXPECT_EQ(m.kept[1].size(), 49u);
}

TEST(Masking, KeptCountIsFloorOfKeptFraction) {
  EXPECT_EQ(kept_count(16, 0.75), 4u);
  EXPECT_EQ(kept_count(10, 0.9), 1u);
  EXPECT_EQ(kept_count(7, 0.5), 3u);
}

TEST(Masking, InvalidConfigurations) {
  for (auto [n, r, k] : {std::tuple{16u, 0.75, 5u}, std::tuple{4u, 0.9, 1u},
                         std::tuple{16u, 1.0, 1u}, std::tuple{16u, 0.5, 0u}}) {
    try {
      validate_mask_config(n, r, k);
      ADD_FAILURE() << n << " " << r << " " << k;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidMaskConfig);
    }
  }
}

TEST(Masking, MatchesSortAndSliceOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 4 + rng() % 253;
    const std::size_t k = 1 + rng() % 4;
    const double ratio = std::uniform_real_distribution<double>(0.0, 0.95)(rng);
    if (k * kept_count(n, ratio) > n || kept_count(n, ratio) == 0) continue;
    auto att = pacmac::testing::uniform_values(n, rng, 0.0, 1.0);
    // Some ties.
    for (std::size_t i = 0; i + 1 < n; i += 7) att[i + 1] = att[i];
    const MaskSet m = attention_conditioned_masks(att, ratio, k);
    EXPECT_EQ(m.kept, pacmac::testing::oracle_masks(att, ratio, k));
    // Positive rescaling changes nothing.
    std::vector<double> scaled = att;
    for (double& a : scaled) a *= 3.5;
    EXPECT_EQ(attention_conditioned_masks(scaled, ratio, k).kept, m.kept);
  }
}

TEST(Masking, MasksAreDisjointAndAgreeWithIndexLists) {
  std::mt19937_64 rng(3);
  const auto att = pacmac::testing::uniform_values(64, rng, 0.0, 1.0);
  const MaskSet m = attention_conditioned_masks(att, 0.75, 3);
  std::vector<int> hits(64, 0);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(m.kept[j].size(), 16u);
    for (std::size_t p = 0; p < 64; ++p) hits[p] += m.masks[j][p];
    for (std::size_t p : m.kept[j]) EXPECT_EQ(m.masks[j][p], 1);
  }
  for (int h : hits) EXPECT_LE(h, 1);
}

TEST(Masking, LengthMismatchOnMaskOfWrongSize) {
  try {
    apply_mask(std::vector<double>(3 * 8 * 8), 3, 8, std::vector<std::uint8_t>(3), 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLengthMismatch);
  }
}

TEST(Masking, RandomMaskPatchFrequencyIsUniform) {
  std::vector<int> hits(8, 0);
  const int seeds = 10000;
  for (int s = 0; s < seeds; ++s) {
    const MaskSet m = random_masks(8, 0.5, 2, static_cast<std::uint64_t>(s));
    for (std::size_t p : m.kept[0]) ++hits[p];
  }
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / seeds, 0.5, 0.02);
}

TEST(Masking, RandomMasksAreSeededAndValid) {
  const MaskSet a = random_masks(16, 0.75, 2, 11);
  const MaskSet b = random_masks(16, 0.75, 2, 11);
  EXPECT_EQ(a.kept, b.kept);
  EXPECT_EQ(a.kept_per_mask(), 4u);
  EXPECT_NE(random_masks(16, 0.75, 2, 12).kept, a.kept);
}

TEST(Masking, KeepingPatchZeroPreservesTopLeftQuadrant) {
  std::mt19937_64 rng(2);
  const auto image = pacmac::testing::uniform_values(3 * 8 * 8, rng, 0.0, 1.0);
  const auto out = apply_mask(image, 3, 8, std::vector<std::uint8_t>{1, 0, 0, 0}, 4);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const std::size_t i = (c * 8 + y) * 8 + x;
        EXPECT_EQ(out[i], y < 4 && x < 4 ? image[i] : 0.0);
      }
}

TEST(Masking, ApplyMaskZeroesOnlyDroppedPatches) {
  std::vector<double> image(3 * 8 * 8, 1.0);
  const std::vector<std::uint8_t> keep = {1, 0, 0, 1};
  const auto out = apply_mask(image, 3, 8, keep, 4);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const std::size_t patch = (y / 4) * 2 + x / 4;
        EXPECT_EQ(out[(c * 8 + y) * 8 + x], keep[patch] ? 1.0 : 0.0);
      }
}

TEST(Masking, JsonLayout) {
  const MaskSet m = attention_conditioned_masks(std::vector<double>{0.4, 0.3, 0.2, 0.1}, 0.5, 2);
  const auto j = to_json(m);
  EXPECT_EQ(j.at("k"), 2);
  EXPECT_EQ(j.at("N"), 4);
  EXPECT_EQ(j.at("kept"), nlohmann::json::parse("[[0,2],[1,3]]"));
}

}  // namespace
}  // namespace pacmac::masking
