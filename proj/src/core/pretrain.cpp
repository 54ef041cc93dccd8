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

#include "pacmac/pretrain.hpp"

#include <cmath>

#include "pacmac/error.hpp"
#include "pacmac/masking.hpp"
#include "pacmac/random.hpp"

namespace pacmac::pretrain {

namespace {

constexpr std::uint64_t kPoolStreamTag = 0x9001;
constexpr std::uint64_t kMaskTag = 0x3a51;
constexpr std::uint64_t kAugmentTag = 0xa9a9;
constexpr std::uint64_t kDecoderSeedTag = 0xdec0;

const std::vector<std::uint8_t>& mask_for(std::span<const std::vector<std::uint8_t>> masks,
                                          std::size_t i) {
  return masks.size() == 1 ? masks[0] : masks[i];
}

void check_masks(const vit::ViTConfig& config, std::size_t count,
                 std::span<const std::vector<std::uint8_t>> masks) {
  if (masks.size() != 1 && masks.size() != count)
    fail(ErrorCode::kShapeMismatch, "reconstruction: need one keep mask per image or one shared");
  for (const auto& m : masks)
    if (m.size() != config.num_patches())
      fail(ErrorCode::kShapeMismatch, "reconstruction: keep mask has " + std::to_string(m.size()) +
                                          " entries, model has " +
                                          std::to_string(config.num_patches()) + " patches");
}

}  // namespace

void PretrainConfig::validate() const {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    fail(ErrorCode::kInvalidConfig, "pretrain mask ratio must lie in (0, 1)");
  if (batch_size == 0) fail(ErrorCode::kInvalidConfig, "pretrain batch size must be >= 1");
  if (lr < 0.0 || final_lr < 0.0) fail(ErrorCode::kInvalidConfig, "negative learning rate");
}

ad::Tensor reconstruct_patches(const vit::ViTParams& params, const vit::ImageBatch& masked_images,
                               std::span<const std::vector<std::uint8_t>> keep_masks) {
  if (!params.decoder) fail(ErrorCode::kInvalidConfig, "reconstruction needs a decoder");
  const vit::ViTConfig& c = params.config;
  check_masks(c, masked_images.count, keep_masks);
  const vit::DecoderParams& dec = *params.decoder;
  const std::size_t b = masked_images.count, t = c.tokens(), d = static_cast<std::size_t>(c.embed_dim);

  const auto enc = vit::forward_graph(params, masked_images);
  ad::Tensor x = ad::add(ad::matmul(enc.tokens, dec.embed_weight), dec.embed_bias);

  // Unkept patch tokens are swapped for the learned mask token.
  std::vector<double> keep(b * t * d, 1.0), drop(b * t * d, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& m = mask_for(keep_masks, i);
    for (std::size_t p = 0; p < c.num_patches(); ++p) {
      if (m[p]) continue;
      const std::size_t row = (i * t + 1 + p) * d;
      std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(row), d, 0.0);
      std::fill_n(drop.begin() + static_cast<std::ptrdiff_t>(row), d, 1.0);
    }
  }
  const ad::Shape shape{b, t, d};
  const ad::Tensor tokens = ad::add(ad::Tensor::zeros(shape), dec.mask_token);
  x = ad::add(ad::mul(x, ad::Tensor::constant(shape, std::move(keep))),
              ad::mul(tokens, ad::Tensor::constant(shape, std::move(drop))));
  x = ad::add(x, dec.pos_embed);
  x = vit::transformer_block(dec.block, x, static_cast<std::size_t>(c.heads));
  x = ad::layer_norm(x, dec.norm_gain, dec.norm_bias);
  x = ad::add(ad::matmul(x, dec.pred_weight), dec.pred_bias);
  return ad::slice(x, 1, 1, c.num_patches());
}

ad::Tensor mae_reconstruction_loss(const vit::ViTParams& params, const vit::ImageBatch& images,
                                   std::span<const std::vector<std::uint8_t>> keep_masks,
                                   bool normalize_targets) {
  const vit::ViTConfig& c = params.config;
  check_masks(c, images.count, keep_masks);
  vit::ImageBatch masked = images;
  const auto side = static_cast<std::size_t>(c.image_size);
  const auto ch = static_cast<std::size_t>(c.channels);
  for (std::size_t i = 0; i < images.count; ++i) {
    const auto out = masking::apply_mask(images.image(i), ch, side, mask_for(keep_masks, i),
                                         static_cast<std::size_t>(c.patch_size));
    std::copy(out.begin(), out.end(), masked.image(i).begin());
  }
  const ad::Tensor prediction = reconstruct_patches(params, masked, keep_masks);
  ad::Tensor target = vit::patchify(c, images);
  if (normalize_targets) {
    std::vector<double> v(target.values().begin(), target.values().end());
    const std::size_t dim = c.patch_dim();
    for (std::size_t row = 0; row < v.size() / dim; ++row) {
      const auto patch = std::span<double>(v).subspan(row * dim, dim);
      double mean = 0.0, var = 0.0;
      for (double x : patch) mean += x;
      mean /= static_cast<double>(dim);
      for (double x : patch) var += (x - mean) * (x - mean);
      const double inv = 1.0 / std::sqrt(var / static_cast<double>(dim) + 1e-6);
      for (double& x : patch) x = (x - mean) * inv;
    }
    target = ad::Tensor::constant(target.shape(), std::move(v));
  }
  std::vector<std::uint8_t> rows(images.count * c.num_patches());
  for (std::size_t i = 0; i < images.count; ++i) {
    const auto& m = mask_for(keep_masks, i);
    for (std::size_t p = 0; p < c.num_patches(); ++p) rows[i * c.num_patches() + p] = m[p] ? 0 : 1;
  }
  return ad::mse_masked(prediction, target, std::move(rows));
}

std::vector<PretrainEpoch> pretrain_in_domain(
    vit::ViTParams& params, const data::Dataset& source, const data::Dataset* target,
    const PretrainConfig& config, const std::function<void(const PretrainEpoch&)>& on_epoch) {
  config.validate();
  data::Dataset pool = source.unlabeled();
  if (config.pool_target && target != nullptr) {
    if (target->image_size() != source.image_size())
      fail(ErrorCode::kShapeMismatch, "pretrain: source and target image geometry differ");
    pool.images.insert(pool.images.end(), target->images.begin(), target->images.end());
    pool.count += target->count;
  }
  if (pool.count == 0) fail(ErrorCode::kEmptyDataset, "pretrain: empty image pool");
  const vit::ViTConfig& c = params.config;
  masking::validate_mask_config(c.num_patches(), config.mask_ratio, 1);
  if (!params.decoder) attach_decoder(params, derive_seed(config.seed, {kDecoderSeedTag}));

  std::vector<PretrainEpoch> history;
  if (config.epochs == 0) return history;
  train::OptimConfig oc;
  oc.lr = config.lr;
  oc.weight_decay = config.weight_decay;
  oc.beta1 = config.beta1;
  oc.beta2 = config.beta2;
  oc.layer_decay = 1.0;
  const auto trainable = train::trainable_parameters(params, false, true);
  train::OptimState state = train::make_optim_state(trainable, oc);
  train::BatchStream stream(pool.count, config.batch_size, config.seed, kPoolStreamTag);
  const std::size_t steps = stream.batches_per_pass();
  train::Schedule sched;
  sched.kind = train::ScheduleKind::kCosine;
  sched.total_epochs = static_cast<double>(config.epochs);
  sched.warmup_epochs = std::min(config.warmup_epochs, sched.total_epochs);
  sched.base_lr = config.lr;
  sched.final_lr = config.final_lr;
  const auto side = static_cast<std::size_t>(c.image_size);
  const auto ch = static_cast<std::size_t>(c.channels);

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    PretrainEpoch e;
    e.epoch = epoch + 1;
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s, ++global_step) {
      const auto idx = stream.next();
      const double lr = train::schedule_lr(
          sched, static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(steps));
      vit::ImageBatch batch = pool.batch(idx);
      std::vector<std::vector<std::uint8_t>> masks;
      for (std::size_t j = 0; j < batch.count; ++j) {
        if (config.augment)
          data::apply_augment(batch.image(j), ch, side,
                              data::draw_augment(derive_seed(config.seed, {kAugmentTag, global_step, j})));
        masks.push_back(masking::random_masks(c.num_patches(), config.mask_ratio, 1,
                                              derive_seed(config.seed, {kMaskTag, global_step, j}))
                            .masks[0]);
      }
      params.zero_grad();
      const ad::Tensor loss = mae_reconstruction_loss(params, batch, masks, config.normalize_targets);
      ad::backward(loss);
      train::adamw_step(trainable, state, lr, c.depth);
      loss_sum += loss.item();
      e.lr = lr;
    }
    e.loss = loss_sum / static_cast<double>(steps);
    history.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  params.zero_grad();
  return history;
}

}  // namespace pacmac::pretrain
