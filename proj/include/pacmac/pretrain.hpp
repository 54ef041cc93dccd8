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

// Masked-image reconstruction pretraining over pooled source and target
// images.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pacmac/data.hpp"
#include "pacmac/tensor.hpp"
#include "pacmac/train.hpp"
#include "pacmac/vit.hpp"

namespace pacmac::pretrain {

struct PretrainConfig {
  double mask_ratio = 0.75;
  std::size_t epochs = 30;
  double warmup_epochs = 5.0;
  std::size_t batch_size = 32;
  double lr = 4e-4;
  double final_lr = 0.0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  /// Pool target images with the source (the default); false pretrains on
  /// source images only.
  bool pool_target = true;
  bool augment = false;
  /// Per-patch standardized pixel targets instead of raw pixels.
  bool normalize_targets = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Encoder sees the images with unkept patches zeroed; the decoder replaces
/// unkept patch tokens by the mask token and predicts raw patch pixels. The
/// loss is the mean squared error over the unkept patches only.
/// `keep_masks` holds one mask per image, or a single mask shared by the
/// batch. With `normalize_targets` each target patch is standardized over
/// its own pixels first. Throws ShapeMismatch and InvalidConfig (no decoder
/// attached).
ad::Tensor mae_reconstruction_loss(const vit::ViTParams& params, const vit::ImageBatch& images,
                                   std::span<const std::vector<std::uint8_t>> keep_masks,
                                   bool normalize_targets = false);

/// Decoder output for the patches, [B, N, patch_dim].
ad::Tensor reconstruct_patches(const vit::ViTParams& params, const vit::ImageBatch& masked_images,
                               std::span<const std::vector<std::uint8_t>> keep_masks);

struct PretrainEpoch {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

/// Attaches a decoder when missing, then minimizes the reconstruction loss
/// over the pool. Labels are never read. The classifier head is not updated.
/// Throws EmptyDataset.
std::vector<PretrainEpoch> pretrain_in_domain(
    vit::ViTParams& params, const data::Dataset& source, const data::Dataset* target,
    const PretrainConfig& config,
    const std::function<void(const PretrainEpoch&)>& on_epoch = {});

}  // namespace pacmac::pretrain
