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

#include "pacmac/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

#include "pacmac/error.hpp"
#include "pacmac/masking.hpp"
#include "pacmac/random.hpp"

namespace pacmac::train {

namespace {

constexpr std::uint64_t kSourceStreamTag = 0x5012ce;
constexpr std::uint64_t kTargetStreamTag = 0x7a12e7;
constexpr std::uint64_t kSourceAugmentTag = 0xa5a5;
constexpr std::uint64_t kTargetAugmentTag = 0xa7a7;
constexpr std::uint64_t kRandomMaskTag = 0x3a5c;

using reliability::ReliabilityVerdict;

std::size_t count_reliable(std::span<const ReliabilityVerdict> verdicts) {
  return static_cast<std::size_t>(
      std::count_if(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.reliable; }));
}

// Source images for one step, optionally augmented with per-position seeds
// derived from the global step, so finetuning and adaptation draw identically.
vit::ImageBatch source_batch(const data::Dataset& source, std::span<const std::size_t> idx,
                             bool augment, std::uint64_t seed, std::size_t step) {
  vit::ImageBatch batch = source.batch(idx);
  if (augment) {
    for (std::size_t j = 0; j < batch.count; ++j)
      data::apply_augment(batch.image(j), batch.channels, batch.height,
                          data::draw_augment(derive_seed(seed, {kSourceAugmentTag, step, j})));
  }
  return batch;
}

std::vector<int> labels_of(const data::Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.labels[i]);
  return out;
}

std::size_t count_correct(const ad::Tensor& logits, std::span<const int> labels) {
  const std::size_t c = logits.dim(1);
  const auto v = logits.values();
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto row = v.subspan(r * c, c);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == labels[r];
  }
  return correct;
}

double scalar_ce(const ad::Tensor& logits, std::span<const int> labels, double smoothing) {
  ad::NoGradGuard guard;
  return ad::cross_entropy_from_logits(logits.detach(), {labels.begin(), labels.end()}, smoothing)
      .item();
}

Schedule make_schedule(ScheduleKind kind, double warmup, std::size_t epochs, double base,
                       double final_lr) {
  Schedule s;
  s.kind = kind;
  s.total_epochs = static_cast<double>(epochs);
  s.warmup_epochs = std::min(warmup, s.total_epochs);
  s.base_lr = base;
  s.final_lr = final_lr;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Optimizer

OptimState make_optim_state(std::span<const vit::NamedParameter> params, const OptimConfig& config) {
  OptimState st;
  st.config = config;
  for (const auto& p : params) {
    st.m.emplace_back(p.tensor.size(), 0.0);
    st.v.emplace_back(p.tensor.size(), 0.0);
  }
  return st;
}

void adamw_update(std::span<double> values, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::size_t step, double lr, double weight_decay,
                  const OptimConfig& c) {
  if (m.size() != values.size() || v.size() != values.size() ||
      (!grad.empty() && grad.size() != values.size()))
    fail(ErrorCode::kShapeMismatch, "adamw_update: state and parameter sizes differ");
  if (step == 0) fail(ErrorCode::kInvalidAttribute, "adamw_update: step is 1-based");
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    if (weight_decay != 0.0) values[i] *= decay;
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.epsilon);
  }
}

double layer_lr_multiplier(int layer, int depth, double layer_decay) {
  if (layer < 0 || layer_decay == 1.0) return 1.0;
  return std::pow(layer_decay, static_cast<double>(depth + 1 - layer));
}

void adamw_step(std::span<const vit::NamedParameter> params, OptimState& state, double lr,
                int depth) {
  if (params.size() != state.m.size())
    fail(ErrorCode::kShapeMismatch, "adamw_step: " + std::to_string(params.size()) +
                                        " parameters, state holds " +
                                        std::to_string(state.m.size()));
  if (!(lr >= 0.0)) fail(ErrorCode::kInvalidAttribute, "adamw_step: negative learning rate");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor t = params[i].tensor;
    if (t.size() != state.m[i].size())
      fail(ErrorCode::kShapeMismatch, "adamw_step: state mismatch at " + params[i].name);
    const double plr = lr * layer_lr_multiplier(params[i].layer, depth, state.config.layer_decay);
    const double wd = params[i].weight_decay ? state.config.weight_decay : 0.0;
    const std::span<const double> grad = t.has_grad() ? t.grad() : std::span<const double>();
    adamw_update(t.mutable_values(), grad, state.m[i], state.v[i], state.step, plr, wd,
                 state.config);
  }
}

// ---------------------------------------------------------------------------
// Schedules

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kCosine ? "cosine" : "constant";
}

ScheduleKind parse_schedule(std::string_view name) {
  if (name == "cosine") return ScheduleKind::kCosine;
  if (name == "constant") return ScheduleKind::kConstantAfterWarmup;
  fail(ErrorCode::kInvalidConfig, "unknown schedule '" + std::string(name) + "'");
}

double schedule_lr(const Schedule& s, double epoch) {
  if (s.warmup_epochs < 0.0 || s.warmup_epochs > s.total_epochs)
    fail(ErrorCode::kInvalidConfig, "warmup epochs must lie in [0, total epochs]");
  if (!(epoch >= 0.0 && epoch <= s.total_epochs + 1e-9))
    fail(ErrorCode::kOutOfRange, "schedule epoch " + std::to_string(epoch) + " outside [0, " +
                                     std::to_string(s.total_epochs) + "]");
  if (epoch < s.warmup_epochs) return s.base_lr * epoch / s.warmup_epochs;
  if (s.kind == ScheduleKind::kConstantAfterWarmup || s.total_epochs == s.warmup_epochs)
    return s.base_lr;
  const double progress =
      std::min(1.0, (epoch - s.warmup_epochs) / (s.total_epochs - s.warmup_epochs));
  return s.final_lr +
         (s.base_lr - s.final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Losses

RunningClassMarginal RunningClassMarginal::uniform(std::size_t classes, double decay) {
  RunningClassMarginal m;
  m.q.assign(classes, 1.0 / static_cast<double>(classes));
  m.decay = decay;
  return m;
}

void RunningClassMarginal::update(std::span<const double> batch_mean) {
  if (batch_mean.size() != q.size())
    fail(ErrorCode::kLengthMismatch, "marginal update has wrong class count");
  double total = 0.0;
  for (std::size_t c = 0; c < q.size(); ++c) {
    q[c] = decay * q[c] + (1.0 - decay) * batch_mean[c];
    total += q[c];
  }
  // Guard against drift from inputs that sum to 1 only approximately.
  for (double& x : q) x /= total;
}

std::vector<std::size_t> selected_rows(std::span<const ReliabilityVerdict> verdicts) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < verdicts.size(); ++i)
    if (verdicts[i].reliable) rows.push_back(i);
  return rows;
}

ad::Tensor sst_loss(std::span<const ReliabilityVerdict> verdicts, const ad::Tensor& view_logits) {
  if (view_logits.rank() != 2 || view_logits.dim(0) != verdicts.size())
    fail(ErrorCode::kLengthMismatch, "sst_loss: logits rows do not match verdicts");
  if (count_reliable(verdicts) == 0) return ad::Tensor::scalar(0.0);
  std::vector<int> labels;
  std::vector<double> weights;
  for (const auto& v : verdicts) {
    labels.push_back(v.pseudolabel);
    weights.push_back(v.reliable ? 1.0 : 0.0);
  }
  return ad::cross_entropy_from_logits(view_logits, std::move(labels), 0.0, std::move(weights),
                                       static_cast<double>(verdicts.size()));
}

ad::Tensor sst_loss_selected(std::span<const ReliabilityVerdict> verdicts,
                             const ad::Tensor& selected_logits) {
  const std::size_t n = count_reliable(verdicts);
  if (n == 0) return ad::Tensor::scalar(0.0);
  if (selected_logits.rank() != 2 || selected_logits.dim(0) != n)
    fail(ErrorCode::kLengthMismatch, "sst_loss: selected logits rows do not match selection");
  std::vector<int> labels;
  for (const auto& v : verdicts)
    if (v.reliable) labels.push_back(v.pseudolabel);
  return ad::cross_entropy_from_logits(selected_logits, std::move(labels), 0.0, {},
                                       static_cast<double>(verdicts.size()));
}

ad::Tensor pacmac_loss(const ad::Tensor& source_logits, std::span<const int> source_labels,
                       const ad::Tensor& target_term, double alpha, double label_smoothing) {
  if (alpha < 0.0) fail(ErrorCode::kInvalidConfig, "alpha must be >= 0");
  ad::Tensor src = ad::cross_entropy_from_logits(
      source_logits, {source_labels.begin(), source_labels.end()}, label_smoothing);
  if (alpha == 0.0) return src;
  return ad::add(src, ad::scale(target_term, alpha));
}

ad::Tensor entropy_rows(const ad::Tensor& logits, std::vector<double> row_weights,
                        double denominator) {
  return ad::cross_entropy_soft(logits, ad::softmax_rows(logits), std::move(row_weights),
                                denominator);
}

RegularizerLosses regularizer_losses(const ad::Tensor& target_logits,
                                     std::span<const ReliabilityVerdict> verdicts,
                                     RunningClassMarginal& marginal) {
  RegularizerLosses out;
  if (!target_logits.defined() || verdicts.empty()) {
    out.empty_batch = true;
    out.entmin = out.entmax = out.diversity = ad::Tensor::scalar(0.0);
    return out;
  }
  if (target_logits.rank() != 2 || target_logits.dim(0) != verdicts.size())
    fail(ErrorCode::kLengthMismatch, "regularizer_losses: logits rows do not match verdicts");
  if (target_logits.dim(1) != marginal.q.size())
    fail(ErrorCode::kLengthMismatch, "regularizer_losses: marginal has wrong class count");
  std::vector<double> rel, unrel;
  double n_rel = 0.0, n_unrel = 0.0;
  for (const auto& v : verdicts) {
    rel.push_back(v.reliable ? 1.0 : 0.0);
    unrel.push_back(v.reliable ? 0.0 : 1.0);
    (v.reliable ? n_rel : n_unrel) += 1.0;
  }
  out.entmin = n_rel > 0 ? entropy_rows(target_logits, rel, n_rel) : ad::Tensor::scalar(0.0);
  out.entmax = n_unrel > 0 ? ad::scale(entropy_rows(target_logits, unrel, n_unrel), -1.0)
                           : ad::Tensor::scalar(0.0);
  const ad::Tensor pbar = ad::mean(ad::softmax_rows(target_logits), 0);
  std::vector<double> logq;
  for (double q : marginal.q) logq.push_back(std::log(std::max(q, 1e-12)));
  out.diversity = ad::sum(ad::mul(pbar, ad::Tensor::constant(pbar.shape(), std::move(logq))));
  marginal.update(pbar.values());
  return out;
}

// ---------------------------------------------------------------------------
// Loops

BatchStream::BatchStream(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                         std::uint64_t tag)
    : count_(count), batch_size_(batch_size), seed_(seed), tag_(tag) {
  if (count == 0) fail(ErrorCode::kEmptyDataset, "batch stream over an empty dataset");
  if (batch_size == 0) fail(ErrorCode::kInvalidConfig, "batch size must be >= 1");
  reshuffle();
}

void BatchStream::reshuffle() {
  order_.resize(count_);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed_, {tag_, pass_}));
  std::shuffle(order_.begin(), order_.end(), rng);
  pos_ = 0;
}

std::vector<std::size_t> BatchStream::next() {
  if (pos_ == count_) {
    ++pass_;
    reshuffle();
  }
  const std::size_t n = std::min(batch_size_, count_ - pos_);
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                               order_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return out;
}

std::size_t BatchStream::batches_per_pass() const {
  return (count_ + batch_size_ - 1) / batch_size_;
}

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,", m.epoch, m.lr, m.source_loss,
                m.target_loss, m.train_accuracy, m.fraction_selected);
  std::string row = buf;
  // Undefined or unavailable values are left empty.
  if (m.selection_precision_defined) {
    std::snprintf(buf, sizeof buf, "%.9g", m.selection_precision);
    row += buf;
  }
  std::snprintf(buf, sizeof buf, ",%.9g,", m.pseudolabel_accuracy);
  row += buf;
  if (m.target_accuracy) {
    std::snprintf(buf, sizeof buf, "%.9g", *m.target_accuracy);
    row += buf;
  }
  return row;
}

void AdaptConfig::validate() const {
  if (alpha < 0.0) fail(ErrorCode::kInvalidConfig, "alpha must be >= 0");
  if (w_div < 0.0 || w_entmax < 0.0)
    fail(ErrorCode::kInvalidConfig, "regularizer weights must be >= 0");
  if (source_batch == 0 || target_batch == 0)
    fail(ErrorCode::kInvalidConfig, "batch sizes must be >= 1");
  if (!(marginal_decay >= 0.0 && marginal_decay < 1.0))
    fail(ErrorCode::kInvalidConfig, "marginal decay must lie in [0, 1)");
  select.validate();
}

std::vector<vit::ForwardResult> predict(const vit::ViTParams& params, const data::Dataset& dataset,
                                        std::size_t chunk) {
  std::vector<vit::ForwardResult> out;
  out.reserve(dataset.count);
  for (std::size_t start = 0; start < dataset.count; start += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, dataset.count - start));
    std::iota(idx.begin(), idx.end(), start);
    auto part = vit::forward(params, dataset.batch(idx));
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

namespace {

double accuracy_against(const vit::ViTParams& params, const data::Dataset& dataset,
                        std::span<const int> labels) {
  const auto results = predict(params, dataset);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < results.size(); ++i) correct += results[i].prediction() == labels[i];
  return results.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(results.size());
}

}  // namespace

double accuracy_on(const vit::ViTParams& params, const data::Dataset& dataset) {
  if (!dataset.has_labels) fail(ErrorCode::kInvalidConfig, "accuracy needs a labeled dataset");
  return accuracy_against(params, dataset, dataset.labels);
}

std::vector<vit::NamedParameter> trainable_parameters(const vit::ViTParams& params,
                                                      bool include_head, bool include_decoder) {
  std::vector<vit::NamedParameter> out;
  for (auto& p : params.named_parameters()) {
    if (p.layer < 0 && !include_decoder) continue;
    if (!include_head && p.name.rfind("head", 0) == 0) continue;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::vector<double>> masked_views(std::span<const double> image,
                                              const vit::ViTConfig& config,
                                              const std::vector<std::vector<std::uint8_t>>& masks) {
  std::vector<std::vector<double>> out;
  out.reserve(masks.size());
  for (const auto& m : masks)
    out.push_back(masking::apply_mask(image, static_cast<std::size_t>(config.channels),
                                      static_cast<std::size_t>(config.image_size), m,
                                      static_cast<std::size_t>(config.patch_size)));
  return out;
}

std::vector<EpochMetrics> finetune_source(vit::ViTParams& params, const data::Dataset& source,
                                          const FinetuneConfig& config,
                                          const data::Dataset* eval,
                                          const EpochCallback& on_epoch) {
  if (source.count == 0) fail(ErrorCode::kEmptyDataset, "finetune: empty source dataset");
  if (!source.has_labels) fail(ErrorCode::kInvalidConfig, "finetune: source must be labeled");
  std::vector<EpochMetrics> history;
  if (config.epochs == 0) return history;

  const auto trainable = trainable_parameters(params, true, false);
  OptimState state = make_optim_state(trainable, config.optim);
  BatchStream stream(source.count, config.batch_size, config.seed, kSourceStreamTag);
  const std::size_t steps = stream.batches_per_pass();
  const Schedule sched = make_schedule(config.schedule, config.warmup_epochs, config.epochs,
                                       config.optim.lr, config.final_lr);
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch + 1;
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t s = 0; s < steps; ++s, ++global_step) {
      const auto idx = stream.next();
      const double lr = schedule_lr(
          sched, static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(steps));
      const auto batch = source_batch(source, idx, config.augment, config.seed, global_step);
      const auto labels = labels_of(source, idx);
      params.zero_grad();
      const auto out = vit::forward_graph(params, batch);
      const ad::Tensor loss = pacmac_loss(out.logits, labels, ad::Tensor(), 0.0,
                                          config.label_smoothing);
      ad::backward(loss);
      adamw_step(trainable, state, lr, params.config.depth);
      loss_sum += loss.item();
      correct += count_correct(out.logits, labels);
      seen += labels.size();
      m.lr = lr;
    }
    m.source_loss = loss_sum / static_cast<double>(steps);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (eval != nullptr && eval->has_labels) m.target_accuracy = accuracy_on(params, *eval);
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  params.zero_grad();
  return history;
}

std::vector<EpochMetrics> adapt_pacmac(vit::ViTParams& params, const data::Dataset& source,
                                       const data::Dataset& target, const AdaptConfig& config,
                                       std::span<const int> diagnostic_labels,
                                       const EpochCallback& on_epoch, AdaptTrace* last_epoch) {
  config.validate();
  if (source.count == 0) fail(ErrorCode::kEmptyDataset, "adapt: empty source dataset");
  if (target.count == 0) fail(ErrorCode::kEmptyDataset, "adapt: empty target dataset");
  if (!source.has_labels) fail(ErrorCode::kInvalidConfig, "adapt: source must be labeled");
  const bool have_labels = !diagnostic_labels.empty();
  if (have_labels && diagnostic_labels.size() != target.count)
    fail(ErrorCode::kLengthMismatch, "adapt: diagnostic labels do not cover the target set");
  const auto& sel = config.select;
  if (sel.strategy == reliability::Strategy::kOracle && !have_labels)
    fail(ErrorCode::kOracleWithoutLabel, "oracle selection requires diagnostic target labels");
  const vit::ViTConfig& vc = params.config;
  const std::size_t n_patches = vc.num_patches();
  const std::size_t k = sel.committee;
  masking::validate_mask_config(n_patches, sel.ratio, k);

  std::vector<EpochMetrics> history;
  if (config.epochs == 0) return history;
  const auto trainable = trainable_parameters(params, true, false);
  OptimState state = make_optim_state(trainable, config.optim);
  BatchStream src_stream(source.count, config.source_batch, config.seed, kSourceStreamTag);
  BatchStream tgt_stream(target.count, config.target_batch, config.seed, kTargetStreamTag);
  const std::size_t steps = tgt_stream.batches_per_pass();
  const Schedule sched = make_schedule(config.schedule, config.warmup_epochs, config.epochs,
                                       config.optim.lr, config.final_lr);
  auto marginal = RunningClassMarginal::uniform(static_cast<std::size_t>(vc.num_classes),
                                                config.marginal_decay);
  const auto side = static_cast<std::size_t>(vc.image_size);
  const auto channels = static_cast<std::size_t>(vc.channels);

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch + 1;
    double src_sum = 0.0, tgt_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    std::vector<ReliabilityVerdict> epoch_verdicts;
    std::vector<int> epoch_labels;
    std::vector<std::size_t> epoch_index;
    for (std::size_t s = 0; s < steps; ++s, ++global_step) {
      const auto tidx = tgt_stream.next();
      const auto sidx = src_stream.next();
      const double lr = schedule_lr(
          sched, static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(steps));

      // Reliability probe: clean pass, masks, masked passes. No gradients.
      const vit::ImageBatch clean_batch = target.batch(tidx);
      const auto clean = vit::forward(params, clean_batch);
      vit::ImageBatch views;
      views.channels = channels;
      views.height = views.width = side;
      for (std::size_t i = 0; i < tidx.size(); ++i) {
        const masking::MaskSet masks =
            sel.masking == reliability::MaskingMode::kAttention
                ? masking::attention_conditioned_masks(clean[i].attention, sel.ratio, k)
                : masking::random_masks(n_patches, sel.ratio, k,
                                        derive_seed(config.seed, {kRandomMaskTag, global_step, i}));
        for (const auto& view : masked_views(clean_batch.image(i), vc, masks.masks))
          views.push_back(view);
      }
      const auto masked = vit::forward(params, views);
      std::vector<ReliabilityVerdict> verdicts;
      for (std::size_t i = 0; i < tidx.size(); ++i) {
        std::optional<int> truth;
        if (have_labels) truth = diagnostic_labels[tidx[i]];
        verdicts.push_back(reliability::assess_reliability(
            clean[i], std::span<const vit::ForwardResult>(masked).subspan(i * k, k), sel, truth));
      }

      // Training graph.
      params.zero_grad();
      const auto src_batch = source_batch(source, sidx, config.augment, config.seed, global_step);
      const auto src_labels = labels_of(source, sidx);
      const auto src_out = vit::forward_graph(params, src_batch);
      ad::Tensor target_term = ad::Tensor::scalar(0.0);
      const auto rows = selected_rows(verdicts);
      if (config.alpha > 0.0 && !rows.empty()) {
        vit::ImageBatch train_views;
        train_views.channels = channels;
        train_views.height = train_views.width = side;
        for (std::size_t i : rows) {
          const auto view_index = i * k + static_cast<std::size_t>(verdicts[i].training_view);
          train_views.push_back(views.image(view_index));
          if (config.augment)
            data::apply_augment(
                train_views.image(train_views.count - 1), channels, side,
                data::draw_augment(derive_seed(config.seed, {kTargetAugmentTag, global_step, i})));
        }
        const auto view_out = vit::forward_graph(params, train_views);
        if (config.star) {
          target_term = entropy_rows(view_out.logits, {}, static_cast<double>(verdicts.size()));
        } else {
          target_term = sst_loss_selected(verdicts, view_out.logits);
        }
      }
      ad::Tensor loss = pacmac_loss(src_out.logits, src_labels, target_term, config.alpha,
                                    config.label_smoothing);
      if (config.star) {
        const auto clean_out = vit::forward_graph(params, clean_batch);
        const RegularizerLosses reg = regularizer_losses(clean_out.logits, verdicts, marginal);
        loss = ad::add(loss, ad::add(ad::scale(reg.entmax, config.w_entmax),
                                     ad::scale(reg.diversity, config.w_div)));
      }
      if (loss.tracked()) {
        ad::backward(loss);
        adamw_step(trainable, state, lr, vc.depth);
      }

      src_sum += scalar_ce(src_out.logits, src_labels, config.label_smoothing);
      tgt_sum += target_term.item();
      correct += count_correct(src_out.logits, src_labels);
      seen += src_labels.size();
      m.lr = lr;
      for (std::size_t i = 0; i < tidx.size(); ++i) {
        epoch_verdicts.push_back(verdicts[i]);
        epoch_index.push_back(tidx[i]);
        if (have_labels) epoch_labels.push_back(diagnostic_labels[tidx[i]]);
      }
    }
    m.source_loss = src_sum / static_cast<double>(steps);
    m.target_loss = tgt_sum / static_cast<double>(steps);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    m.fraction_selected = static_cast<double>(count_reliable(epoch_verdicts)) /
                          static_cast<double>(epoch_verdicts.size());
    if (have_labels) {
      const auto stats =
          reliability::selection_stats(epoch_verdicts, epoch_labels, vc.num_classes);
      m.selection_precision = stats.precision;
      m.selection_precision_defined = stats.precision_defined;
      m.pseudolabel_accuracy =
          static_cast<double>(stats.correct) / static_cast<double>(stats.total);
      m.target_accuracy = accuracy_against(params, target, diagnostic_labels);
    }
    history.push_back(m);
    if (on_epoch) on_epoch(m);
    if (last_epoch != nullptr && epoch + 1 == config.epochs) {
      last_epoch->target_index = std::move(epoch_index);
      last_epoch->verdicts = std::move(epoch_verdicts);
    }
  }
  params.zero_grad();
  return history;
}

}  // namespace pacmac::train
