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

// Small Vision Transformer: patch embedding, class token, pre-norm
// transformer blocks, linear classifier head, and class-token attention
// extraction.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pacmac/tensor.hpp"

namespace pacmac::vit {

struct ViTConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int depth = 4;
  int heads = 4;
  int embed_dim = 128;
  int mlp_ratio = 4;
  int num_classes = 8;
  /// Transformer layer whose class-token attention is reported; -1 = last.
  int attention_layer = -1;

  /// Throws InvalidConfig.
  void validate() const;
  std::size_t grid() const { return static_cast<std::size_t>(image_size / patch_size); }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const {
    return static_cast<std::size_t>(patch_size * patch_size * channels);
  }
  std::size_t head_dim() const { return static_cast<std::size_t>(embed_dim / heads); }
  std::size_t resolved_attention_layer() const {
    return attention_layer < 0 ? static_cast<std::size_t>(depth - 1)
                               : static_cast<std::size_t>(attention_layer);
  }

  bool operator==(const ViTConfig&) const = default;
};

/// Batch of images, laid out count x channels x height x width.
struct ImageBatch {
  std::size_t count = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  std::size_t image_size() const { return channels * height * width; }
  std::span<const double> image(std::size_t i) const {
    return std::span<const double>(pixels).subspan(i * image_size(), image_size());
  }
  std::span<double> image(std::size_t i) {
    return std::span<double>(pixels).subspan(i * image_size(), image_size());
  }
  void push_back(std::span<const double> img);
};

/// Class-token attention over the N patches, averaged over heads. The
/// CLS->CLS weight is dropped and the rest are not renormalized.
struct AttentionMap {
  std::vector<double> scores;
};

struct ForwardResult {
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> cls_embedding;
  AttentionMap attention;

  /// Argmax of probs; ties go to the lower class index.
  int prediction() const;
  double confidence() const;
};

struct BlockParams {
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor qkv_weight, qkv_bias;
  ad::Tensor proj_weight, proj_bias;
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor fc1_weight, fc1_bias;
  ad::Tensor fc2_weight, fc2_bias;
};

/// Reconstruction decoder used only by masked-image pretraining.
struct DecoderParams {
  ad::Tensor embed_weight, embed_bias;
  ad::Tensor mask_token;
  ad::Tensor pos_embed;
  BlockParams block;
  ad::Tensor norm_gain, norm_bias;
  ad::Tensor pred_weight, pred_bias;
};

struct NamedParameter {
  std::string name;
  ad::Tensor tensor;
  /// Depth index for layer-wise learning-rate decay: 0 for the embeddings,
  /// 1..depth for the blocks, depth+1 for the final norm and head, -1 for the
  /// decoder.
  int layer = 0;
  bool weight_decay = false;
};

struct ViTParams {
  ViTConfig config;
  ad::Tensor patch_weight, patch_bias;
  ad::Tensor cls_token;
  ad::Tensor pos_embed;
  std::vector<BlockParams> blocks;
  ad::Tensor norm_gain, norm_bias;
  ad::Tensor head_weight, head_bias;
  std::optional<DecoderParams> decoder;

  /// Stable order; this is also the checkpoint manifest order.
  std::vector<NamedParameter> named_parameters() const;
  ViTParams clone() const;
  void zero_grad() const;
};

/// Truncated-normal (std 0.02, cut at 2 std) weights, unit layer-norm gains,
/// zero biases. Deterministic in (config, seed).
ViTParams init_params(const ViTConfig& config, std::uint64_t seed);
void attach_decoder(ViTParams& params, std::uint64_t seed);

/// [B, N, patch_dim] tensor of patch pixels, patch index row-major over the
/// grid and (channel, row, column) order within a patch.
ad::Tensor patchify(const ViTConfig& config, const ImageBatch& images);

/// One pre-norm transformer block. When `attention_out` is set it receives the
/// head-averaged CLS->patch attention, [B, N] row-major.
ad::Tensor transformer_block(const BlockParams& block, const ad::Tensor& x, std::size_t heads,
                             std::vector<double>* attention_out = nullptr);

struct EncoderOutput {
  ad::Tensor tokens;              // [B, T, D] after the final layer norm
  ad::Tensor cls;                 // [B, D]
  ad::Tensor logits;              // [B, C]
  std::vector<double> attention;  // [B, N]
};

/// Differentiable forward pass; records history when params are tracked and
/// gradients are enabled.
EncoderOutput forward_graph(const ViTParams& params, const ImageBatch& images);

/// Inference without recording history. Throws ShapeMismatch.
std::vector<ForwardResult> forward(const ViTParams& params, const ImageBatch& images);

std::vector<std::vector<double>> encode_cls(const ViTParams& params, const ImageBatch& images);

/// Checkpoint: "PMC1", u64 little-endian header length, JSON header (config
/// and parameter manifest of name/shape/offset), then float32 little-endian
/// payloads in manifest order.
void save_checkpoint(const ViTParams& params, const std::filesystem::path& path);
ViTParams load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter to float32 precision, the storage precision of
/// checkpoints.
void quantize_to_storage(ViTParams& params);

}  // namespace pacmac::vit
