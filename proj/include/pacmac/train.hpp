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

// Losses, AdamW, learning-rate schedules, and the source-finetuning and
// masked-consistency adaptation loops.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pacmac/data.hpp"
#include "pacmac/reliability.hpp"
#include "pacmac/tensor.hpp"
#include "pacmac/vit.hpp"

namespace pacmac::train {

// ---------------------------------------------------------------------------
// Optimizer

struct OptimConfig {
  double lr = 2e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Per-layer multiplier decay^(depth + 1 - layer); 1.0 disables it.
  double layer_decay = 0.75;
};

struct OptimState {
  OptimConfig config;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Moments sized to `params`, which must be passed in the same order to every
/// adamw_step call.
OptimState make_optim_state(std::span<const vit::NamedParameter> params, const OptimConfig& config);

/// One AdamW update of a single value array. Decoupled weight decay is applied
/// first (value *= 1 - lr * wd), then the bias-corrected Adam step. `step` is
/// the 1-based step count used for bias correction.
void adamw_update(std::span<double> values, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::size_t step, double lr, double weight_decay,
                  const OptimConfig& config);

/// Updates every parameter from its accumulated gradient (absent gradient
/// counts as zero). Weight decay only touches parameters flagged for it; the
/// decoder (layer -1) is exempt from layer-wise decay. Throws ShapeMismatch
/// when `params` does not match the state.
void adamw_step(std::span<const vit::NamedParameter> params, OptimState& state, double lr,
                int depth);

double layer_lr_multiplier(int layer, int depth, double layer_decay);

// ---------------------------------------------------------------------------
// Schedules

enum class ScheduleKind { kConstantAfterWarmup, kCosine };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule(std::string_view name);

struct Schedule {
  ScheduleKind kind = ScheduleKind::kConstantAfterWarmup;
  double warmup_epochs = 5.0;
  double total_epochs = 20.0;
  double base_lr = 2e-4;
  double final_lr = 0.0;
};

/// Linear ramp 0 -> base over the warmup, then constant or cosine to final_lr.
/// `epoch` may be fractional. Throws OutOfRange outside [0, total] and
/// InvalidConfig when warmup exceeds total.
double schedule_lr(const Schedule& schedule, double epoch);

// ---------------------------------------------------------------------------
// Losses

/// EMA of batch-mean predictions, used by the diversity regularizer.
struct RunningClassMarginal {
  std::vector<double> q;
  double decay = 0.9;

  static RunningClassMarginal uniform(std::size_t classes, double decay = 0.9);
  /// q <- decay * q + (1 - decay) * batch_mean. Throws LengthMismatch.
  void update(std::span<const double> batch_mean);
};

/// Mean over the batch of r(x) * CE(view logits, pseudolabel). Row i of
/// `view_logits` belongs to verdict i. Pseudolabels are plain integers, so no
/// gradient reaches the clean pass. Returns an untracked zero when nothing is
/// selected. Throws LengthMismatch.
ad::Tensor sst_loss(std::span<const reliability::ReliabilityVerdict> verdicts,
                    const ad::Tensor& view_logits);
/// Variant over only the selected rows: `selected_logits` row j belongs to the
/// j-th reliable verdict; the mean is still over all `verdicts`.
ad::Tensor sst_loss_selected(std::span<const reliability::ReliabilityVerdict> verdicts,
                             const ad::Tensor& selected_logits);

/// Indices of reliable verdicts, in order.
std::vector<std::size_t> selected_rows(std::span<const reliability::ReliabilityVerdict> verdicts);

/// Mean source cross-entropy (with label smoothing) + alpha * target term.
/// alpha == 0 returns the source term alone.
ad::Tensor pacmac_loss(const ad::Tensor& source_logits, std::span<const int> source_labels,
                       const ad::Tensor& target_term, double alpha, double label_smoothing = 0.0);

struct RegularizerLosses {
  ad::Tensor entmin;     // mean entropy over reliable rows
  ad::Tensor entmax;     // minus mean entropy over unreliable rows
  ad::Tensor diversity;  // sum_c pbar(c) log q(c)
  bool empty_batch = false;
};

/// Regularizers computed from target logits (row i belongs to verdict i). The
/// marginal is updated with the batch-mean prediction after the losses are
/// formed. An empty batch reports empty_batch with zero losses.
RegularizerLosses regularizer_losses(const ad::Tensor& target_logits,
                                     std::span<const reliability::ReliabilityVerdict> verdicts,
                                     RunningClassMarginal& marginal);

/// Mean Shannon entropy of softmax rows, differentiable, with per-row weights
/// and explicit denominator.
ad::Tensor entropy_rows(const ad::Tensor& logits, std::vector<double> row_weights,
                        double denominator);

// ---------------------------------------------------------------------------
// Loops

/// Seeded minibatch order: each pass over the data is a fresh permutation
/// (seeded by base seed, tag, and pass index); the last batch of a pass may be
/// short.
class BatchStream {
 public:
  BatchStream(std::size_t count, std::size_t batch_size, std::uint64_t seed, std::uint64_t tag);
  std::vector<std::size_t> next();
  std::size_t batches_per_pass() const;

 private:
  void reshuffle();
  std::size_t count_, batch_size_;
  std::uint64_t seed_, tag_;
  std::size_t pass_ = 0, pos_ = 0;
  std::vector<std::size_t> order_;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // at the last step of the epoch
  double source_loss = 0.0;
  double target_loss = 0.0;
  double fraction_selected = 0.0;
  double selection_precision = 0.0;
  bool selection_precision_defined = false;
  /// Accuracy of all clean-image pseudolabels seen during the epoch.
  double pseudolabel_accuracy = 0.0;
  /// Full-pass evaluation after the epoch; absent without labels.
  std::optional<double> target_accuracy;
  double train_accuracy = 0.0;
};

inline constexpr const char* kMetricsCsvHeader =
    "epoch,lr,source_loss,target_loss,train_accuracy,fraction_selected,selection_precision,"
    "pseudolabel_accuracy,target_accuracy";
std::string metrics_csv_row(const EpochMetrics& m);

struct FinetuneConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  OptimConfig optim;
  double warmup_epochs = 5.0;
  ScheduleKind schedule = ScheduleKind::kConstantAfterWarmup;
  double final_lr = 0.0;
  double label_smoothing = 0.1;
  bool augment = true;
  std::uint64_t seed = 0;
};

struct AdaptConfig {
  double alpha = 0.1;
  reliability::SelectionConfig select;
  std::size_t epochs = 20;
  std::size_t source_batch = 32;
  std::size_t target_batch = 32;
  OptimConfig optim;
  double warmup_epochs = 5.0;
  ScheduleKind schedule = ScheduleKind::kConstantAfterWarmup;
  double final_lr = 0.0;
  double label_smoothing = 0.1;
  bool augment = true;
  /// Entropy-based variant: entmin on reliable views replaces target CE, plus
  /// entmax on unreliable and diversity terms on the clean target pass.
  bool star = false;
  double w_div = 5e-4;
  double w_entmax = 1.0;
  double marginal_decay = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Inference over a whole dataset in bounded chunks.
std::vector<vit::ForwardResult> predict(const vit::ViTParams& params, const data::Dataset& dataset,
                                        std::size_t chunk = 256);
double accuracy_on(const vit::ViTParams& params, const data::Dataset& dataset);

/// Source cross-entropy training of encoder and head. Throws EmptyDataset and
/// InvalidConfig (unlabeled source). `eval` (labeled) adds target_accuracy.
std::vector<EpochMetrics> finetune_source(vit::ViTParams& params, const data::Dataset& source,
                                          const FinetuneConfig& config,
                                          const data::Dataset* eval = nullptr,
                                          const EpochCallback& on_epoch = {});

/// Per-verdict record of the last epoch, for dumps.
struct AdaptTrace {
  std::vector<std::size_t> target_index;
  std::vector<reliability::ReliabilityVerdict> verdicts;
};

/// Selective self-training on masked target views plus source cross-entropy.
/// `diagnostic_labels` (empty or one per target image) feed only the metrics
/// and the oracle strategy. Epoch length follows the target stream; the
/// source stream cycles.
std::vector<EpochMetrics> adapt_pacmac(vit::ViTParams& params, const data::Dataset& source,
                                       const data::Dataset& target, const AdaptConfig& config,
                                       std::span<const int> diagnostic_labels = {},
                                       const EpochCallback& on_epoch = {},
                                       AdaptTrace* last_epoch = nullptr);

/// Trainable parameters: decoder excluded unless asked; head excluded when
/// `include_head` is false (pretraining).
std::vector<vit::NamedParameter> trainable_parameters(const vit::ViTParams& params,
                                                      bool include_head, bool include_decoder);

/// Masked copies of `image` for each mask of the set.
std::vector<std::vector<double>> masked_views(std::span<const double> image,
                                              const vit::ViTConfig& config,
                                              const std::vector<std::vector<std::uint8_t>>& masks);

}  // namespace pacmac::train
