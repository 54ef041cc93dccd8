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

// Accuracy, calibration, feature probes, and masked-embedding distances.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pacmac/data.hpp"
#include "pacmac/vit.hpp"

namespace pacmac::metrics {

using Features = std::vector<std::vector<double>>;

struct AccuracyReport {
  double overall = 0.0;
  std::size_t total = 0;
  std::size_t correct = 0;
  /// Indexed by true label; nullopt for classes with no samples.
  std::vector<std::optional<double>> per_class;

  nlohmann::json to_json() const;
};

/// Throws LengthMismatch and EmptyInput.
AccuracyReport accuracy(std::span<const int> predictions, std::span<const int> labels,
                        int num_classes);

struct EceBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  double weight = 0.0;
};

struct EceReport {
  std::vector<EceBin> bins;
  double ece = 0.0;

  nlohmann::json to_json() const;
};

/// Equal-width bins on (0, 1]: bin i holds confidences in (i/B, (i+1)/B], and
/// a confidence of exactly 0 joins bin 0. Throws EmptyInput, LengthMismatch,
/// OutOfRange (confidence outside [0, 1]), InvalidAttribute (bins == 0).
EceReport ece(std::span<const double> confidences, std::span<const std::uint8_t> correct,
              std::size_t bins = 15);
std::size_t ece_bin_index(double confidence, std::size_t bins);

struct KnnReport {
  double accuracy = 0.0;
  std::vector<int> predictions;
};

/// Each target point takes the majority label of its k nearest source points
/// (Euclidean). Vote ties go to the label with the smaller summed distance,
/// then to the lower label; equidistant neighbours are taken in source order.
/// Throws DimensionMismatch, LengthMismatch, InvalidAttribute (k out of range).
KnnReport knn_cross_domain(const Features& source, std::span<const int> source_labels,
                           const Features& target, std::span<const int> target_labels,
                           std::size_t k = 7);

struct DaScoreReport {
  double c2 = 0.0;  // source vs. target
  double c3 = 0.0;  // same class, different domain
  double c4 = 0.0;  // different class, same domain
  double c5 = 0.0;  // different class, different domain
  double da_score = 0.0;

  nlohmann::json to_json() const;
};

/// c3 - max(c4, c5), errors in percent.
double da_score(double c3, double c4, double c5);
DaScoreReport da_report_from_errors(double c2, double c3, double c4, double c5);

struct ProbeConfig {
  double train_fraction = 0.7;
  std::size_t restarts = 5;
  std::size_t iterations = 300;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  /// Class pairs (or classes, for the same-class probe) sampled per probe
  /// family; 0 uses all of them.
  std::size_t max_groups = 8;
};

/// Held-out error (%) of a logistic probe separating `negatives` from
/// `positives`, balanced by subsampling the larger side. Best of the restarts
/// on one fixed split. Throws InsufficientData with fewer than 2 per side.
double probe_error(const Features& negatives, const Features& positives, std::uint64_t seed,
                   const ProbeConfig& config = {});

/// `domains` holds 0 (source) or 1 (target) per feature row. Throws
/// InsufficientData without two classes present in both domains, and
/// LengthMismatch.
DaScoreReport da_score_probe(const Features& features, std::span<const int> domains,
                             std::span<const int> classes, std::uint64_t seed,
                             const ProbeConfig& config = {});

/// Sample Pearson correlation. Throws LengthMismatch, InsufficientData
/// (fewer than 2 points), ZeroVariance.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct HistogramBin {
  double left = 0.0;
  std::size_t count_correct = 0;
  std::size_t count_incorrect = 0;
};

struct DistanceReport {
  double mean_correct = 0.0;
  double mean_incorrect = 0.0;
  std::size_t count_correct = 0;
  std::size_t count_incorrect = 0;
  /// False when the group is empty; the mean is then reported as 0.
  bool correct_defined = false;
  bool incorrect_defined = false;
  std::vector<double> distances;
  std::vector<std::uint8_t> correct;
  std::vector<HistogramBin> histogram;

  nlohmann::json to_json() const;
  /// bin_left,count_correct,count_incorrect
  std::string histogram_csv() const;
};

/// Distance between the class-token embedding of each image and of a
/// randomly masked copy, grouped by whether the clean prediction is right.
/// Throws InvalidConfig (unlabeled data), InvalidMaskConfig.
DistanceReport embedding_distance_stats(const vit::ViTParams& params,
                                        const data::Dataset& dataset, double mask_ratio,
                                        std::uint64_t seed, std::size_t histogram_bins = 20);

}  // namespace pacmac::metrics
