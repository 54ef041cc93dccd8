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

#include "pacmac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>

#include "pacmac/error.hpp"
#include "pacmac/masking.hpp"
#include "pacmac/random.hpp"

namespace pacmac::metrics {

namespace {

constexpr std::uint64_t kProbeSplitTag = 0x5b1;
constexpr std::uint64_t kProbeInitTag = 0x1417;
constexpr std::uint64_t kGroupTag = 0x9a0;
constexpr std::uint64_t kDistanceMaskTag = 0xd157;
constexpr std::size_t kMaxPerSide = 500;

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

Features subsample(const Features& rows, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  Features out;
  for (std::size_t i = 0; i < std::min(n, idx.size()); ++i) out.push_back(rows[idx[i]]);
  return out;
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

nlohmann::json AccuracyReport::to_json() const {
  nlohmann::json pc = nlohmann::json::array();
  for (const auto& a : per_class) pc.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
  return {{"overall", overall}, {"total", total}, {"correct", correct}, {"per_class", pc}};
}

AccuracyReport accuracy(std::span<const int> predictions, std::span<const int> labels,
                        int num_classes) {
  if (predictions.size() != labels.size())
    fail(ErrorCode::kLengthMismatch, "accuracy: predictions and labels differ in length");
  if (labels.empty()) fail(ErrorCode::kEmptyInput, "accuracy: no samples");
  AccuracyReport r;
  r.total = labels.size();
  std::vector<std::size_t> seen(static_cast<std::size_t>(std::max(num_classes, 0))), hit(seen.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool ok = predictions[i] == labels[i];
    r.correct += ok;
    if (labels[i] >= 0 && labels[i] < num_classes) {
      ++seen[static_cast<std::size_t>(labels[i])];
      hit[static_cast<std::size_t>(labels[i])] += ok;
    }
  }
  r.overall = static_cast<double>(r.correct) / static_cast<double>(r.total);
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (seen[c] == 0)
      r.per_class.emplace_back(std::nullopt);
    else
      r.per_class.emplace_back(static_cast<double>(hit[c]) / static_cast<double>(seen[c]));
  }
  return r;
}

nlohmann::json EceReport::to_json() const {
  nlohmann::json b = nlohmann::json::array();
  for (const auto& bin : bins)
    b.push_back({{"count", bin.count},
                 {"mean_confidence", bin.mean_confidence},
                 {"accuracy", bin.accuracy},
                 {"weight", bin.weight}});
  return {{"ece", ece}, {"bins", b}};
}

std::size_t ece_bin_index(double confidence, std::size_t bins) {
  const double b = static_cast<double>(bins);
  auto i = static_cast<std::size_t>(std::max(0.0, std::ceil(confidence * b) - 1.0));
  i = std::min(i, bins - 1);
  // Snap to the boundaries exactly as i / B evaluates in floating point.
  while (i > 0 && confidence <= static_cast<double>(i) / b) --i;
  while (i + 1 < bins && confidence > static_cast<double>(i + 1) / b) ++i;
  return i;
}

EceReport ece(std::span<const double> confidences, std::span<const std::uint8_t> correct,
              std::size_t bins) {
  if (bins == 0) fail(ErrorCode::kInvalidAttribute, "ece: bins must be >= 1");
  if (confidences.size() != correct.size())
    fail(ErrorCode::kLengthMismatch, "ece: confidences and correctness differ in length");
  if (confidences.empty()) fail(ErrorCode::kEmptyInput, "ece: no samples");
  EceReport r;
  r.bins.resize(bins);
  std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0))
      fail(ErrorCode::kOutOfRange, "ece: confidence " + std::to_string(c) + " outside [0, 1]");
    const std::size_t b = ece_bin_index(c, bins);
    ++r.bins[b].count;
    conf_sum[b] += c;
    hit_sum[b] += correct[i] ? 1.0 : 0.0;
  }
  const double total = static_cast<double>(confidences.size());
  for (std::size_t b = 0; b < bins; ++b) {
    EceBin& bin = r.bins[b];
    if (bin.count == 0) continue;
    const double n = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / n;
    bin.accuracy = hit_sum[b] / n;
    bin.weight = n / total;
    r.ece += bin.weight * std::abs(bin.accuracy - bin.mean_confidence);
  }
  return r;
}

KnnReport knn_cross_domain(const Features& source, std::span<const int> source_labels,
                           const Features& target, std::span<const int> target_labels,
                           std::size_t k) {
  if (source.size() != source_labels.size() || target.size() != target_labels.size())
    fail(ErrorCode::kLengthMismatch, "knn: features and labels differ in length");
  if (k == 0 || k > source.size())
    fail(ErrorCode::kInvalidAttribute, "knn: k must lie in [1, source count]");
  if (target.empty()) fail(ErrorCode::kEmptyInput, "knn: no target points");
  const std::size_t dim = source.front().size();
  for (const auto& f : source)
    if (f.size() != dim) fail(ErrorCode::kDimensionMismatch, "knn: ragged source features");
  for (const auto& f : target)
    if (f.size() != dim) fail(ErrorCode::kDimensionMismatch, "knn: target dimension differs");

  KnnReport r;
  std::size_t correct = 0;
  std::vector<std::pair<double, std::size_t>> dist(source.size());
  for (std::size_t t = 0; t < target.size(); ++t) {
    for (std::size_t s = 0; s < source.size(); ++s)
      dist[s] = {std::sqrt(squared_distance(target[t], source[s])), s};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::map<int, std::pair<std::size_t, double>> votes;  // label -> (count, summed distance)
    for (std::size_t j = 0; j < k; ++j) {
      auto& v = votes[source_labels[dist[j].second]];
      ++v.first;
      v.second += dist[j].first;
    }
    int best = 0;
    std::pair<std::size_t, double> best_v{0, 0.0};
    bool first = true;
    for (const auto& [label, v] : votes) {
      if (first || v.first > best_v.first ||
          (v.first == best_v.first && v.second < best_v.second)) {
        best = label;
        best_v = v;
        first = false;
      }
    }
    r.predictions.push_back(best);
    correct += best == target_labels[t];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(target.size());
  return r;
}

nlohmann::json DaScoreReport::to_json() const {
  return {{"C2", c2}, {"C3", c3}, {"C4", c4}, {"C5", c5}, {"da_score", da_score}};
}

double da_score(double c3, double c4, double c5) { return c3 - std::max(c4, c5); }

DaScoreReport da_report_from_errors(double c2, double c3, double c4, double c5) {
  return {c2, c3, c4, c5, da_score(c3, c4, c5)};
}

double probe_error(const Features& negatives, const Features& positives, std::uint64_t seed,
                   const ProbeConfig& config) {
  if (negatives.size() < 2 || positives.size() < 2)
    fail(ErrorCode::kInsufficientData, "probe needs at least 2 samples per side");
  std::mt19937_64 rng(derive_seed(seed, {kProbeSplitTag}));
  const std::size_t per_side = std::min({negatives.size(), positives.size(), kMaxPerSide});
  const Features neg = subsample(negatives, per_side, rng);
  const Features pos = subsample(positives, per_side, rng);
  const std::size_t dim = neg.front().size();

  // Fixed split, stratified per side.
  const auto n_train = std::max<std::size_t>(
      1, std::min(per_side - 1, static_cast<std::size_t>(config.train_fraction * per_side)));
  Features xtr, xte;
  std::vector<double> ytr, yte;
  for (std::size_t i = 0; i < per_side; ++i) {
    (i < n_train ? xtr : xte).push_back(neg[i]);
    (i < n_train ? ytr : yte).push_back(0.0);
    (i < n_train ? xtr : xte).push_back(pos[i]);
    (i < n_train ? ytr : yte).push_back(1.0);
  }
  std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
  for (const auto& x : xtr)
    for (std::size_t j = 0; j < dim; ++j) mu[j] += x[j];
  for (double& m : mu) m /= static_cast<double>(xtr.size());
  for (const auto& x : xtr)
    for (std::size_t j = 0; j < dim; ++j) sd[j] += (x[j] - mu[j]) * (x[j] - mu[j]);
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(xtr.size())) + 1e-8;
  const auto standardize = [&](Features& rows) {
    for (auto& x : rows)
      for (std::size_t j = 0; j < dim; ++j) x[j] = (x[j] - mu[j]) / sd[j];
  };
  standardize(xtr);
  standardize(xte);

  double best = 100.0;
  for (std::size_t restart = 0; restart < std::max<std::size_t>(1, config.restarts); ++restart) {
    std::mt19937_64 init(derive_seed(seed, {kProbeInitTag, restart}));
    std::normal_distribution<double> g(0.0, 0.1);
    std::vector<double> w(dim);
    for (double& v : w) v = g(init);
    double bias = 0.0;
    std::vector<double> grad(dim);
    for (std::size_t it = 0; it < config.iterations; ++it) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double gb = 0.0;
      for (std::size_t i = 0; i < xtr.size(); ++i) {
        double z = bias;
        for (std::size_t j = 0; j < dim; ++j) z += w[j] * xtr[i][j];
        const double err = sigmoid(z) - ytr[i];
        for (std::size_t j = 0; j < dim; ++j) grad[j] += err * xtr[i][j];
        gb += err;
      }
      const double inv = 1.0 / static_cast<double>(xtr.size());
      for (std::size_t j = 0; j < dim; ++j)
        w[j] -= config.learning_rate * (grad[j] * inv + config.l2 * w[j]);
      bias -= config.learning_rate * gb * inv;
    }
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < xte.size(); ++i) {
      double z = bias;
      for (std::size_t j = 0; j < dim; ++j) z += w[j] * xte[i][j];
      wrong += (z > 0.0 ? 1.0 : 0.0) != yte[i];
    }
    best = std::min(best, 100.0 * static_cast<double>(wrong) / static_cast<double>(xte.size()));
  }
  return best;
}

DaScoreReport da_score_probe(const Features& features, std::span<const int> domains,
                             std::span<const int> classes, std::uint64_t seed,
                             const ProbeConfig& config) {
  if (features.size() != domains.size() || features.size() != classes.size())
    fail(ErrorCode::kLengthMismatch, "da_score_probe: features, domains, classes differ");
  std::map<std::pair<int, int>, Features> groups;  // (domain, class)
  std::map<int, Features> by_domain;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (domains[i] != 0 && domains[i] != 1)
      fail(ErrorCode::kInvalidAttribute, "da_score_probe: domain must be 0 or 1");
    groups[{domains[i], classes[i]}].push_back(features[i]);
    by_domain[domains[i]].push_back(features[i]);
  }
  std::vector<int> shared;
  for (const auto& [key, rows] : groups) {
    if (key.first != 0 || rows.size() < 2) continue;
    const auto other = groups.find({1, key.second});
    if (other != groups.end() && other->second.size() >= 2) shared.push_back(key.second);
  }
  if (by_domain.size() < 2 || shared.size() < 2)
    fail(ErrorCode::kInsufficientData,
         "da_score_probe: need two classes with samples in both domains");

  std::uint64_t probe_index = 0;
  const auto family = [&](std::vector<std::pair<const Features*, const Features*>> cands,
                          std::uint64_t tag) {
    std::mt19937_64 rng(derive_seed(seed, {kGroupTag, tag}));
    std::shuffle(cands.begin(), cands.end(), rng);
    if (config.max_groups > 0 && cands.size() > config.max_groups) cands.resize(config.max_groups);
    double total = 0.0;
    for (const auto& [neg, pos] : cands) total += probe_error(*neg, *pos, derive_seed(seed, {tag, probe_index++}), config);
    return total / static_cast<double>(cands.size());
  };

  DaScoreReport r;
  r.c2 = family({{&by_domain[0], &by_domain[1]}}, 2);
  std::vector<std::pair<const Features*, const Features*>> c3, c4, c5;
  for (int c : shared) c3.emplace_back(&groups[{0, c}], &groups[{1, c}]);
  for (int a : shared)
    for (int b : shared) {
      if (a == b) continue;
      if (a < b)
        for (int d : {0, 1}) c4.emplace_back(&groups[{d, a}], &groups[{d, b}]);
      c5.emplace_back(&groups[{0, a}], &groups[{1, b}]);
    }
  r.c3 = family(c3, 3);
  r.c4 = family(c4, 4);
  r.c5 = family(c5, 5);
  r.da_score = da_score(r.c3, r.c4, r.c5);
  return r;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) fail(ErrorCode::kLengthMismatch, "pearson: lengths differ");
  if (xs.size() < 2) fail(ErrorCode::kInsufficientData, "pearson: need at least 2 points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::kZeroVariance, "pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

nlohmann::json DistanceReport::to_json() const {
  return {{"mean_correct", correct_defined ? nlohmann::json(mean_correct) : nlohmann::json(nullptr)},
          {"mean_incorrect",
           incorrect_defined ? nlohmann::json(mean_incorrect) : nlohmann::json(nullptr)},
          {"count_correct", count_correct},
          {"count_incorrect", count_incorrect}};
}

std::string DistanceReport::histogram_csv() const {
  std::string out = "bin_left,count_correct,count_incorrect\n";
  char buf[128];
  for (const auto& b : histogram) {
    std::snprintf(buf, sizeof buf, "%.9g,%zu,%zu\n", b.left, b.count_correct, b.count_incorrect);
    out += buf;
  }
  return out;
}

DistanceReport embedding_distance_stats(const vit::ViTParams& params,
                                        const data::Dataset& dataset, double mask_ratio,
                                        std::uint64_t seed, std::size_t histogram_bins) {
  if (!dataset.has_labels)
    fail(ErrorCode::kInvalidConfig, "embedding distances need a labeled dataset");
  const vit::ViTConfig& c = params.config;
  masking::validate_mask_config(c.num_patches(), mask_ratio, 1);
  DistanceReport r;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < dataset.count; start += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, dataset.count - start));
    std::iota(idx.begin(), idx.end(), start);
    const vit::ImageBatch clean = dataset.batch(idx);
    vit::ImageBatch masked = clean;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto m = masking::random_masks(c.num_patches(), mask_ratio, 1,
                                           derive_seed(seed, {kDistanceMaskTag, idx[j]}));
      const auto out = masking::apply_mask(clean.image(j), static_cast<std::size_t>(c.channels),
                                           static_cast<std::size_t>(c.image_size), m.masks[0],
                                           static_cast<std::size_t>(c.patch_size));
      std::copy(out.begin(), out.end(), masked.image(j).begin());
    }
    const auto a = vit::forward(params, clean);
    const auto b = vit::forward(params, masked);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      r.distances.push_back(std::sqrt(squared_distance(a[j].cls_embedding, b[j].cls_embedding)));
      r.correct.push_back(a[j].prediction() == dataset.labels[idx[j]] ? 1 : 0);
    }
  }
  double sum_c = 0.0, sum_i = 0.0;
  for (std::size_t i = 0; i < r.distances.size(); ++i) {
    if (r.correct[i]) {
      sum_c += r.distances[i];
      ++r.count_correct;
    } else {
      sum_i += r.distances[i];
      ++r.count_incorrect;
    }
  }
  r.correct_defined = r.count_correct > 0;
  r.incorrect_defined = r.count_incorrect > 0;
  if (r.correct_defined) r.mean_correct = sum_c / static_cast<double>(r.count_correct);
  if (r.incorrect_defined) r.mean_incorrect = sum_i / static_cast<double>(r.count_incorrect);

  const std::size_t bins = std::max<std::size_t>(1, histogram_bins);
  const double hi = r.distances.empty() ? 0.0 : *std::max_element(r.distances.begin(), r.distances.end());
  const double width = hi > 0.0 ? hi / static_cast<double>(bins) : 1.0;
  r.histogram.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) r.histogram[b].left = width * static_cast<double>(b);
  for (std::size_t i = 0; i < r.distances.size(); ++i) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>(r.distances[i] / width));
    (r.correct[i] ? r.histogram[b].count_correct : r.histogram[b].count_incorrect)++;
  }
  return r;
}

}  // namespace pacmac::metrics
