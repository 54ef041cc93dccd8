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

#include "pacmac/data.hpp"
#include "pacmac/error.hpp"
#include "pacmac/pretrain.hpp"

namespace pacmac::pretrain {
namespace {

vit::ViTConfig tiny_model() {
  vit::ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.depth = 1;
  c.heads = 2;
  c.embed_dim = 8;
  c.mlp_ratio = 2;
  c.num_classes = 3;
  return c;
}

vit::ViTParams zero_decoder_model() {
  vit::ViTParams p = vit::init_params(tiny_model(), 1);
  vit::attach_decoder(p, 2);
  for (double& v : p.decoder->pred_weight.mutable_values()) v = 0.0;
  for (double& v : p.decoder->pred_bias.mutable_values()) v = 0.0;
  return p;
}

TEST(Reconstruction, OneMaskedPatchOfOnes) {
  const vit::ViTParams p = zero_decoder_model();
  vit::ImageBatch b{0, 3, 8, 8, {}};
  b.push_back(std::vector<double>(192, 1.0));
  const std::vector<std::vector<std::uint8_t>> keep{{1, 1, 1, 0}};
  EXPECT_DOUBLE_EQ(mae_reconstruction_loss(p, b, keep).item(), 1.0);
  // A constant patch standardizes to zero.
  EXPECT_NEAR(mae_reconstruction_loss(p, b, keep, true).item(), 0.0, 1e-12);
}

TEST(Reconstruction, OnlyMaskedPatchesCount) {
  const vit::ViTParams p = zero_decoder_model();
  vit::ImageBatch b{0, 3, 8, 8, {}};
  std::vector<double> img(192, 0.0);
  // Patch 0 (top-left 4x4 of every channel) is bright and kept.
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) img[(c * 8 + y) * 8 + x] = 1.0;
  b.push_back(img);
  const std::vector<std::vector<std::uint8_t>> keep{{1, 0, 0, 0}};
  EXPECT_DOUBLE_EQ(mae_reconstruction_loss(p, b, keep).item(), 0.0);
}

TEST(Reconstruction, DecoderOutputShape) {
  vit::ViTParams p = vit::init_params(tiny_model(), 1);
  vit::attach_decoder(p, 2);
  vit::ImageBatch b{0, 3, 8, 8, {}};
  b.push_back(std::vector<double>(192, 0.3));
  b.push_back(std::vector<double>(192, 0.6));
  const std::vector<std::vector<std::uint8_t>> keep{{1, 0, 1, 0}};
  const auto out = reconstruct_patches(p, b, keep);
  EXPECT_EQ(out.shape(), (ad::Shape{2, 4, 48}));
}

TEST(Reconstruction, NeedsDecoder) {
  const vit::ViTParams p = vit::init_params(tiny_model(), 1);
  vit::ImageBatch b{0, 3, 8, 8, {}};
  b.push_back(std::vector<double>(192, 1.0));
  const std::vector<std::vector<std::uint8_t>> keep{{1, 1, 1, 0}};
  EXPECT_THROW(mae_reconstruction_loss(p, b, keep), Error);
}

TEST(Pretrain, LeavesHeadAloneAndIgnoresLabels) {
  vit::ViTConfig c = tiny_model();
  c.image_size = 16;
  vit::ViTParams p = vit::init_params(c, 3);
  const std::vector<double> head(p.head_weight.values().begin(), p.head_weight.values().end());
  const std::vector<double> patch(p.patch_weight.values().begin(), p.patch_weight.values().end());
  const auto source = data::generate_synthetic(2, 4, data::source_spec(), 1, 16).unlabeled();
  const auto target = data::generate_synthetic(2, 4, data::target_spec(), 2, 16).unlabeled();
  PretrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.warmup_epochs = 1.0;
  const auto log = pretrain_in_domain(p, source, &target, cfg);
  ASSERT_EQ(log.size(), 2u);
  EXPECT_TRUE(p.decoder.has_value());
  EXPECT_TRUE(std::equal(head.begin(), head.end(), p.head_weight.values().begin()));
  EXPECT_FALSE(std::equal(patch.begin(), patch.end(), p.patch_weight.values().begin()));
}

TEST(Pretrain, DeterministicLossStream) {
  vit::ViTConfig c = tiny_model();
  c.image_size = 16;
  const auto source = data::generate_synthetic(2, 4, data::source_spec(), 1, 16);
  auto run = [&] {
    vit::ViTParams p = vit::init_params(c, 3);
    PretrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.warmup_epochs = 1.0;
    std::vector<double> losses;
    for (const auto& e : pretrain_in_domain(p, source, nullptr, cfg)) losses.push_back(e.loss);
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(Pretrain, EmptyPool) {
  vit::ViTParams p = vit::init_params(tiny_model(), 3);
  data::Dataset empty;
  EXPECT_THROW(pretrain_in_domain(p, empty, nullptr, PretrainConfig{}), Error);
}

}  // namespace
}  // namespace pacmac::pretrain
