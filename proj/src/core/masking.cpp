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

#include "pacmac/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pacmac/error.hpp"

namespace pacmac::masking {

namespace {

MaskSet assign_round_robin(std::span<const std::size_t> ranked, std::size_t n, double ratio,
                           std::size_t committee) {
  const std::size_t per_mask = kept_count(n, ratio);
  MaskSet out;
  out.k = committee;
  out.n = n;
  out.ratio = ratio;
  out.masks.assign(committee, std::vector<std::uint8_t>(n, 0));
  out.kept.assign(committee, {});
  std::size_t next = 0;
  for (std::size_t round = 0; round < per_mask; ++round) {
    for (std::size_t j = 0; j < committee; ++j) {
      const std::size_t patch = ranked[next++];
      out.masks[j][patch] = 1;
      out.kept[j].push_back(patch);
    }
  }
  return out;
}

}  // namespace

std::size_t kept_count(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::floor((1.0 - ratio) * static_cast<double>(n) + 1e-9));
}

void validate_mask_config(std::size_t n, double ratio, std::size_t committee) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    fail(ErrorCode::kInvalidMaskConfig, "masking ratio must lie in [0, 1)");
  if (committee == 0) fail(ErrorCode::kInvalidMaskConfig, "committee size must be >= 1");
  const std::size_t per_mask = kept_count(n, ratio);
  if (per_mask == 0)
    fail(ErrorCode::kInvalidMaskConfig, "ratio " + std::to_string(ratio) + " keeps no patch of " +
                                            std::to_string(n));
  if (committee * per_mask > n)
    fail(ErrorCode::kInvalidMaskConfig,
         std::to_string(committee) + " disjoint masks of " + std::to_string(per_mask) +
             " patches do not fit in " + std::to_string(n) + " patches");
}

MaskSet attention_conditioned_masks(std::span<const double> attention, double ratio,
                                    std::size_t committee) {
  const std::size_t n = attention.size();
  validate_mask_config(n, ratio, committee);
  std::vector<std::size_t> ranked(n);
  std::iota(ranked.begin(), ranked.end(), std::size_t{0});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](std::size_t a, std::size_t b) { return attention[a] > attention[b]; });
  return assign_round_robin(ranked, n, ratio, committee);
}

MaskSet attention_conditioned_masks(const vit::AttentionMap& attention, double ratio,
                                    std::size_t committee) {
  return attention_conditioned_masks(attention.scores, ratio, committee);
}

MaskSet random_masks(std::size_t n, double ratio, std::size_t committee, std::uint64_t seed) {
  validate_mask_config(n, ratio, committee);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return assign_round_robin(order, n, ratio, committee);
}

std::vector<double> apply_mask(std::span<const double> image, std::size_t channels,
                               std::size_t side, std::span<const std::uint8_t> mask,
                               std::size_t patch_size) {
  if (patch_size == 0 || side % patch_size != 0)
    fail(ErrorCode::kLengthMismatch, "apply_mask: side not divisible by patch size");
  const std::size_t grid = side / patch_size;
  if (mask.size() != grid * grid)
    fail(ErrorCode::kLengthMismatch, "apply_mask: mask has " + std::to_string(mask.size()) +
                                         " entries, image has " + std::to_string(grid * grid) +
                                         " patches");
  if (image.size() != channels * side * side)
    fail(ErrorCode::kLengthMismatch, "apply_mask: image size does not match geometry");
  std::vector<double> out(image.begin(), image.end());
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (mask[p]) continue;
    const std::size_t y0 = (p / grid) * patch_size;
    const std::size_t x0 = (p % grid) * patch_size;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = y0; y < y0 + patch_size; ++y)
        std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((c * side + y) * side + x0),
                    patch_size, 0.0);
  }
  return out;
}

nlohmann::json to_json(const MaskSet& masks) {
  return {{"k", masks.k}, {"N", masks.n}, {"ratio", masks.ratio}, {"kept", masks.kept}};
}

}  // namespace pacmac::masking
