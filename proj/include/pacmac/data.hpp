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

// Procedural two-domain shape datasets, their on-disk format, and the light
// augmentation used during training.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pacmac/vit.hpp"

namespace pacmac::data {

inline constexpr int kMaxShapeClasses = 8;

using Rgb = std::array<double, 3>;

struct DomainSpec {
  std::string domain = "source";
  /// Filled silhouettes when true, outlines of width `outline_width` otherwise.
  bool filled = true;
  double outline_width = 0.12;  // in units of the shape radius
  /// Opacity of the interior inside an outline (0 = hollow).
  double interior = 0.0;
  /// Per-instance interior opacity is interior - interior_spread * pose.shade.
  double interior_spread = 0.0;
  double background = 0.85;
  std::vector<Rgb> palette;
  /// Standard deviation of additive Gaussian pixel noise.
  double noise = 0.0;

  nlohmann::json to_json() const;
  static DomainSpec from_json(const nlohmann::json& j);
};

/// Filled shapes in saturated colours on a light background.
DomainSpec source_spec();
/// Dilated dark silhouettes (stroke plus opaque interior) on a noisy grey background.
DomainSpec target_spec();

const char* shape_name(int class_id);

/// Placement of one shape in normalized image coordinates ([-1, 1] per axis).
struct ShapePose {
  double cx = 0.0, cy = 0.0;
  double radius = 0.5;
  double angle = 0.0;
  int color = 0;  // palette index (modulo palette size)
  double shade = 0.0;  // in [0, 1), scaled by DomainSpec::interior_spread
};

ShapePose draw_pose(std::uint64_t seed);

/// Renders one shape into a channels x side x side image in [0, 1].
/// `noise_seed` is used only when spec.noise > 0.
std::vector<float> render_shape(int class_id, const ShapePose& pose, const DomainSpec& spec,
                                int side, std::uint64_t noise_seed);

struct Dataset {
  std::size_t count = 0;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  int num_classes = 0;
  bool has_labels = false;
  std::string domain;
  std::vector<std::string> class_names;
  std::vector<float> images;  // index-major, count x channels x height x width
  std::vector<int> labels;    // empty when !has_labels

  std::size_t image_size() const { return channels * height * width; }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images).subspan(i * image_size(), image_size());
  }
  vit::ImageBatch batch(std::span<const std::size_t> indices) const;
  vit::ImageBatch all() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Same images with labels dropped (the unlabeled target view).
  Dataset unlabeled() const;
};

/// Class-major poses: sample i*C + c is class c. Pose draws depend only on
/// (seed, class, index), so two domains generated with the same seed contain
/// the same shapes in different styles. Throws InvalidSpec.
Dataset generate_synthetic(int classes, int per_class, const DomainSpec& spec, std::uint64_t seed,
                           int side = 32);

/// manifest.json + images.bin ("PMD1", float32 LE) + labels.csv when labeled.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Throws FileNotFound, CorruptManifest, MagicMismatch, TruncatedPayload.
Dataset load_dataset(const std::filesystem::path& dir);

struct AugmentDraw {
  bool flip = false;
  double crop_scale = 1.0;
  double crop_x = 0.0;  // offset as a fraction of the available slack
  double crop_y = 0.0;
  double brightness = 0.0;

  bool neutral() const { return !flip && crop_scale == 1.0 && brightness == 0.0; }
};

AugmentDraw draw_augment(std::uint64_t seed);
/// Crop-resize (bilinear), horizontal flip, brightness shift, clamp to [0, 1].
void apply_augment(std::span<double> image, std::size_t channels, std::size_t side,
                   const AugmentDraw& draw);
std::vector<double> augment(std::span<const double> image, std::size_t channels, std::size_t side,
                            std::uint64_t seed);

}  // namespace pacmac::data
