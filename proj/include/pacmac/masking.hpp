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

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "pacmac/vit.hpp"

namespace pacmac::masking {

/// k disjoint patch-keep masks (1 = patch kept) over N patches.
struct MaskSet {
  std::size_t k = 0;
  std::size_t n = 0;
  double ratio = 0.0;
  std::vector<std::vector<std::uint8_t>> masks;
  /// Kept patch indices of each mask, in assignment (pop) order.
  std::vector<std::vector<std::size_t>> kept;

  std::size_t kept_per_mask() const { return kept.empty() ? 0 : kept.front().size(); }
};

/// L = floor((1 - r) * N). A 1e-9 slack absorbs representation error so that
/// e.g. r = 0.9, N = 10 keeps one patch.
std::size_t kept_count(std::size_t n, double ratio);

/// Throws InvalidMaskConfig unless 0 <= r < 1, k >= 1, L >= 1 and k * L <= N.
void validate_mask_config(std::size_t n, double ratio, std::size_t committee);

/// Greedy round-robin assignment of patches, taken in descending attention
/// order (ties: lower patch index first), to k masks until each keeps L.
MaskSet attention_conditioned_masks(std::span<const double> attention, double ratio,
                                    std::size_t committee);
MaskSet attention_conditioned_masks(const vit::AttentionMap& attention, double ratio,
                                    std::size_t committee);

/// Same assignment over a seeded uniform shuffle of 0..N-1.
MaskSet random_masks(std::size_t n, double ratio, std::size_t committee, std::uint64_t seed);

/// Zeroes the pixels of every patch the mask does not keep. `image` is
/// channels x side x side. Throws LengthMismatch.
std::vector<double> apply_mask(std::span<const double> image, std::size_t channels,
                               std::size_t side, std::span<const std::uint8_t> mask,
                               std::size_t patch_size);

/// {"k", "N", "ratio", "kept": [[...], ...]}
nlohmann::json to_json(const MaskSet& masks);

}  // namespace pacmac::masking
