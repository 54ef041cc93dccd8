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

// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 when
// any criterion fails. Criteria 4-7 train the desk pipeline
// (pretrain -> finetune -> adapt) on three seeds and take a while on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "pacmac/data.hpp"
#include "pacmac/experiments.hpp"
#include "pacmac/masking.hpp"
#include "pacmac/metrics.hpp"
#include "pacmac/parallel.hpp"
#include "pacmac/pretrain.hpp"
#include "pacmac/random.hpp"
#include "pacmac/reliability.hpp"
#include "pacmac/train.hpp"
#include "pacmac/vit.hpp"

namespace {

using namespace pacmac;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradients

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst_primitive = 0.0, worst_composed = 0.0;
  std::string worst_name;
  for (ad::PrimitiveKind kind : ad::kAllPrimitives)
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
      const double e = testing::primitive_gradient_trial(kind, 1000 + trial);
      if (e > worst_primitive) {
        worst_primitive = e;
        worst_name = ad::primitive_name(kind);
      }
    }
  for (auto loss : {testing::ComposedLoss::kSourceCrossEntropy, testing::ComposedLoss::kSelfTraining,
                    testing::ComposedLoss::kReconstruction, testing::ComposedLoss::kEntropy})
    for (std::uint64_t trial = 0; trial < 25; ++trial)
      worst_composed = std::max(worst_composed, testing::composed_gradient_trial(loss, 2000 + trial));
  const double secs = seconds_since(t0);
  return {worst_primitive < 1e-5 && worst_composed < 1e-4 && secs < 120.0,
          fmt("worst primitive rel. error %.2e (%s), worst composed %.2e, %.1f s",
              worst_primitive, worst_name.c_str(), worst_composed, secs)};
}

// ---------------------------------------------------------------------------
// 2. Masking

Outcome masking_oracle() {
  const auto t0 = Clock::now();
  std::size_t failures = 0;
  const double example[] = {0.5, 0.1, 0.3, 0.05, 0.02, 0.01, 0.015, 0.005};
  const auto ex = masking::attention_conditioned_masks(example, 0.5, 2);
  const bool example_ok = ex.kept.size() == 2 && ex.kept[0] == std::vector<std::size_t>{0, 1, 4, 5} &&
                          ex.kept[1] == std::vector<std::size_t>{2, 3, 6, 7};

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 4 + rng() % 253;
    const std::size_t k = 1 + rng() % std::min<std::size_t>(4, n);
    const std::size_t l = 1 + rng() % (n / k);
    const double ratio = std::max(0.0, 1.0 - (static_cast<double>(l) + 0.5) / static_cast<double>(n));
    // Coarse values so that ties occur.
    std::vector<double> att(n);
    for (double& a : att) a = static_cast<double>(rng() % 50) / 50.0 + 1e-3;
    const auto got = masking::attention_conditioned_masks(att, ratio, k);
    const auto want = testing::oracle_masks(att, ratio, k);
    bool ok = got.kept == want;
    std::vector<int> seen(n, 0);
    for (std::size_t j = 0; j < k; ++j) {
      ok = ok && got.kept[j].size() == l;
      for (std::size_t p : got.kept[j]) ok = ok && ++seen[p] == 1 && got.masks[j][p] == 1;
    }
    // Rank interleaving: the t-th pick of mask j is ranked no lower than the
    // t-th pick of mask j + 1, which is no lower than the (t+1)-th of mask j.
    for (std::size_t t = 0; t < l && ok; ++t)
      for (std::size_t j = 0; j + 1 < k; ++j)
        ok = ok && att[got.kept[j][t]] >= att[got.kept[j + 1][t]];
    const double c = 0.1 + static_cast<double>(rng() % 1000) / 10.0;
    std::vector<double> scaled(att);
    for (double& a : scaled) a *= c;
    ok = ok && masking::attention_conditioned_masks(scaled, ratio, k).kept == got.kept;
    if (!ok) ++failures;
  }
  const double secs = seconds_since(t0);
  return {example_ok && failures == 0 && secs < 60.0,
          fmt("worked example %s, %zu/1000 random configurations disagree, %.1f s",
              example_ok ? "exact" : "WRONG", failures, secs)};
}

// ---------------------------------------------------------------------------
// 3. Reliability truth table

Outcome truth_table() {
  const auto t0 = Clock::now();
  std::size_t checked = 0, mismatches = 0, exceptions = 0;
  for (int classes = 1; classes <= 4; ++classes)
    for (std::size_t k = 1; k <= 3; ++k) {
      std::size_t patterns = 1;
      for (std::size_t j = 0; j < k; ++j) patterns *= static_cast<std::size_t>(classes);
      for (reliability::Strategy s : reliability::kAllStrategies)
        for (reliability::Voting v : {reliability::Voting::kUnanimous, reliability::Voting::kMajority})
          for (int pred = 0; pred < classes; ++pred)
            for (std::size_t pat = 0; pat < patterns; ++pat) {
              std::vector<int> masked(k);
              std::size_t rest = pat;
              for (std::size_t j = 0; j < k; ++j) {
                masked[j] = static_cast<int>(rest % static_cast<std::size_t>(classes));
                rest /= static_cast<std::size_t>(classes);
              }
              std::vector<std::optional<int>> labels;
              for (int y = 0; y < classes; ++y) labels.emplace_back(y);
              if (s != reliability::Strategy::kOracle) labels.emplace_back(std::nullopt);
              for (double conf : {0.2, 0.5, 0.50001, 0.9})
                for (const auto& label : labels) {
                  reliability::SelectionConfig cfg;
                  cfg.strategy = s;
                  cfg.voting = v;
                  cfg.committee = k;
                  cfg.threshold = 0.5;
                  ++checked;
                  try {
                    const auto got = reliability::assess_reliability(pred, conf, masked, cfg, label);
                    const auto want =
                        testing::oracle_reliability(pred, conf, masked, s, v, 0.5, label);
                    if (got.reliable != want.reliable || got.consistent != want.consistent ||
                        got.confident != want.confident || got.training_view != want.training_view)
                      ++mismatches;
                  } catch (const std::exception&) {
                    ++exceptions;
                  }
                }
            }
    }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && exceptions == 0 && secs < 60.0,
          fmt("%zu cases, %zu mismatches, %zu exceptions, %.1f s", checked, mismatches, exceptions,
              secs)};
}

// ---------------------------------------------------------------------------
// 4-7. Desk pipeline

// Desk profile. Config defaults keep the published values; these overrides
// make a 20-epoch run on a from-scratch tiny ViT move at all.
vit::ViTConfig desk_model() {
  vit::ViTConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.depth = 2;
  c.heads = 4;
  c.embed_dim = 64;
  c.mlp_ratio = 2;
  c.num_classes = 8;
  return c;
}

pretrain::PretrainConfig desk_pretrain(std::uint64_t seed) {
  pretrain::PretrainConfig c;
  c.epochs = 30;
  c.normalize_targets = true;
  c.seed = seed;
  return c;
}

train::FinetuneConfig desk_finetune(std::uint64_t seed) {
  train::FinetuneConfig c;
  c.epochs = 20;
  c.optim.lr = 1e-3;
  c.warmup_epochs = 2.0;
  c.seed = seed;
  return c;
}

train::AdaptConfig desk_adapt(std::uint64_t seed) {
  train::AdaptConfig c;
  c.epochs = 20;
  c.alpha = 1.0;
  c.optim.lr = 5e-4;
  c.schedule = train::ScheduleKind::kCosine;
  c.warmup_epochs = 1.0;
  c.select.ratio = 0.5;
  c.seed = seed;
  return c;
}

struct Variant {
  const char* name;
  reliability::Strategy strategy;
  reliability::MaskingMode masking;
};

constexpr Variant kVariants[] = {
    {"all", reliability::Strategy::kAll, reliability::MaskingMode::kAttention},
    {"consistent_or_confident", reliability::Strategy::kConsistentOrConfident,
     reliability::MaskingMode::kAttention},
    {"oracle", reliability::Strategy::kOracle, reliability::MaskingMode::kAttention},
    {"consistent_or_confident/random", reliability::Strategy::kConsistentOrConfident,
     reliability::MaskingMode::kRandom},
};
constexpr std::size_t kVariantCount = std::size(kVariants);

struct SeedRun {
  std::uint64_t seed = 0;
  double knn_init = 0.0, knn_pretrained = 0.0;
  double source_only = 0.0, source_test = 0.0;
  std::array<double, kVariantCount> final_accuracy{};
  std::array<std::vector<train::EpochMetrics>, kVariantCount> streams;
  vit::ViTParams finetuned;
};

struct Domains {
  data::Dataset source, source_test, target;
};

Domains make_domains(std::uint64_t seed) {
  return {data::generate_synthetic(8, 250, data::source_spec(), derive_seed(seed, {1})),
          data::generate_synthetic(8, 50, data::source_spec(), derive_seed(seed, {3})),
          data::generate_synthetic(8, 250, data::target_spec(), derive_seed(seed, {2}))};
}

SeedRun run_seed(std::uint64_t seed, const fs::path& out) {
  const auto t0 = Clock::now();
  SeedRun r;
  r.seed = seed;
  const Domains d = make_domains(seed);
  vit::ViTParams params = vit::init_params(desk_model(), seed);
  r.knn_init = 100.0 * experiments::knn_accuracy(params, d.source, d.target, 7);
  pretrain::pretrain_in_domain(params, d.source, &d.target, desk_pretrain(seed));
  r.knn_pretrained = 100.0 * experiments::knn_accuracy(params, d.source, d.target, 7);
  train::finetune_source(params, d.source, desk_finetune(seed));
  r.source_only = 100.0 * train::accuracy_on(params, d.target);
  r.source_test = 100.0 * train::accuracy_on(params, d.source_test);
  std::printf("  seed %llu: knn %.2f -> %.2f, source-only %.2f (source test %.2f), %.0f s\n",
              static_cast<unsigned long long>(seed), r.knn_init, r.knn_pretrained, r.source_only,
              r.source_test, seconds_since(t0));
  std::fflush(stdout);

  const data::Dataset unlabeled = d.target.unlabeled();
  parallel_for(kVariantCount, [&](std::size_t v) {
    vit::ViTParams p = params.clone();
    train::AdaptConfig cfg = desk_adapt(seed);
    cfg.select.strategy = kVariants[v].strategy;
    cfg.select.masking = kVariants[v].masking;
    r.streams[v] = train::adapt_pacmac(p, d.source, unlabeled, cfg, d.target.labels);
    r.final_accuracy[v] = 100.0 * r.streams[v].back().target_accuracy.value_or(0.0);
  });
  for (std::size_t v = 0; v < kVariantCount; ++v) {
    std::printf("  seed %llu: adapt[%s] %.2f\n", static_cast<unsigned long long>(seed),
                kVariants[v].name, r.final_accuracy[v]);
    std::ofstream csv(out / fmt("seed%llu_%zu_metrics.csv", static_cast<unsigned long long>(seed), v));
    csv << "# " << kVariants[v].name << "\n" << train::kMetricsCsvHeader << "\n";
    for (const auto& m : r.streams[v]) csv << train::metrics_csv_row(m) << "\n";
  }
  std::printf("  seed %llu done in %.0f s\n", static_cast<unsigned long long>(seed),
              seconds_since(t0));
  std::fflush(stdout);
  r.finetuned = std::move(params);
  return r;
}

double mean_of(const std::vector<SeedRun>& runs, auto get) {
  double s = 0.0;
  for (const auto& r : runs) s += get(r);
  return s / static_cast<double>(runs.size());
}

Outcome pipeline_trend(const std::vector<SeedRun>& runs, double secs) {
  const double so = mean_of(runs, [](const SeedRun& r) { return r.source_only; });
  const double all = mean_of(runs, [](const SeedRun& r) { return r.final_accuracy[0]; });
  const double cc = mean_of(runs, [](const SeedRun& r) { return r.final_accuracy[1]; });
  const double oracle = mean_of(runs, [](const SeedRun& r) { return r.final_accuracy[2]; });
  const bool a = cc >= all + 1.0 && cc >= so + 5.0;
  const bool b = oracle >= cc;
  return {a && b, fmt("source-only %.2f, all %.2f, consistent_or_confident %.2f, oracle %.2f "
                      "(need cc >= all+1 %s, cc >= source-only+5 %s, oracle >= cc %s), %.0f s",
                      so, all, cc, oracle, cc >= all + 1.0 ? "ok" : "no",
                      cc >= so + 5.0 ? "ok" : "no", b ? "ok" : "no", secs)};
}

Outcome selection_precision(const std::vector<SeedRun>& runs) {
  std::size_t epochs = 0, wins = 0;
  for (const auto& r : runs)
    for (const auto& m : r.streams[1]) {
      ++epochs;
      if (m.selection_precision_defined && m.selection_precision > m.pseudolabel_accuracy) ++wins;
    }
  const double share = epochs ? static_cast<double>(wins) / static_cast<double>(epochs) : 0.0;
  return {share >= 0.8, fmt("precision above pseudolabel accuracy in %zu/%zu epochs (%.0f%%)", wins,
                            epochs, 100.0 * share)};
}

Outcome masking_trend(const std::vector<SeedRun>& runs) {
  const double att = mean_of(runs, [](const SeedRun& r) { return r.final_accuracy[1]; });
  const double rnd = mean_of(runs, [](const SeedRun& r) { return r.final_accuracy[3]; });
  return {att >= rnd - 0.5, fmt("attention masking %.2f vs random masking %.2f", att, rnd)};
}

Outcome pretraining_effect(const std::vector<SeedRun>& runs) {
  std::string per_seed;
  bool all_seeds = true;
  for (const auto& r : runs) {
    per_seed += fmt(" %.2f->%.2f", r.knn_init, r.knn_pretrained);
    all_seeds = all_seeds && r.knn_pretrained >= r.knn_init + 5.0;
  }
  const double init = mean_of(runs, [](const SeedRun& r) { return r.knn_init; });
  const double pt = mean_of(runs, [](const SeedRun& r) { return r.knn_pretrained; });
  return {all_seeds, fmt("cross-domain kNN init %.2f, pretrained %.2f (per seed:%s)", init, pt,
                         per_seed.c_str())};
}

// ---------------------------------------------------------------------------
// 8. Metric oracles

Outcome metric_oracles() {
  std::mt19937_64 rng(8);
  std::size_t ece_bad = 0, knn_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    const std::size_t bins = 1 + rng() % 20;
    std::vector<double> conf(n);
    std::vector<std::uint8_t> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
      // A quarter of the samples sit exactly on bin edges.
      conf[i] = rng() % 4 == 0 ? static_cast<double>(rng() % (bins + 1)) / static_cast<double>(bins)
                               : std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      correct[i] = static_cast<std::uint8_t>(rng() % 2);
    }
    if (metrics::ece(conf, correct, bins).ece != testing::oracle_ece(conf, correct, bins)) ++ece_bad;
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ns = 8 + rng() % 92, nt = 1 + rng() % 100, dim = 1 + rng() % 6;
    const std::size_t k = 1 + rng() % 7;
    metrics::Features src(ns, std::vector<double>(dim)), tgt(nt, std::vector<double>(dim));
    std::vector<int> sl(ns), tl(nt);
    for (auto& f : src)
      for (double& x : f) x = static_cast<double>(rng() % 7);  // coarse grid forces ties
    for (auto& f : tgt)
      for (double& x : f) x = static_cast<double>(rng() % 7);
    for (int& l : sl) l = static_cast<int>(rng() % 4);
    for (int& l : tl) l = static_cast<int>(rng() % 4);
    if (metrics::knn_cross_domain(src, sl, tgt, tl, k).predictions != testing::oracle_knn(src, sl, tgt, k))
      ++knn_bad;
  }
  const double da = metrics::da_score(8.5, 2.6, 1.0);
  const std::vector<double> xs{-2.0, 0.5, 1.0, 3.0, 7.5};
  std::vector<double> up, down;
  for (double x : xs) {
    up.push_back(3.0 * x - 1.0);
    down.push_back(-0.5 * x + 4.0);
  }
  const double r_up = metrics::pearson(xs, up), r_down = metrics::pearson(xs, down);
  const bool ok = ece_bad == 0 && knn_bad == 0 && std::abs(da - 5.9) < 1e-9 &&
                  std::abs(r_up - 1.0) < 1e-12 && std::abs(r_down + 1.0) < 1e-12;
  return {ok, fmt("ece %zu/1000 mismatches, knn %zu/100 mismatches, da_score %.12g, pearson "
                  "%+.15f / %+.15f",
                  ece_bad, knn_bad, da, r_up, r_down)};
}

// ---------------------------------------------------------------------------
// 9. Determinism and persistence

Outcome determinism(const vit::ViTParams& finetuned, const fs::path& out) {
  const Domains d = make_domains(0);
  std::vector<std::size_t> idx(200);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const data::Dataset source = d.source.subset(idx), target = d.target.subset(idx);
  auto stream = [&] {
    vit::ViTParams p = finetuned.clone();
    train::AdaptConfig cfg = desk_adapt(5);
    cfg.epochs = 2;
    std::vector<std::string> rows;
    for (const auto& m : train::adapt_pacmac(p, source, target.unlabeled(), cfg, target.labels))
      rows.push_back(fmt("%a,%a,%a,%a,%a,%a", m.lr, m.source_loss, m.target_loss,
                         m.fraction_selected, m.selection_precision,
                         m.target_accuracy.value_or(-1.0)));
    return rows;
  };
  const bool streams_equal = stream() == stream();

  vit::ViTParams q = finetuned.clone();
  vit::quantize_to_storage(q);
  const fs::path ckpt = out / "roundtrip.pmc";
  vit::save_checkpoint(q, ckpt);
  const vit::ViTParams loaded = vit::load_checkpoint(ckpt);
  std::vector<std::size_t> batch_idx(64);
  for (std::size_t i = 0; i < batch_idx.size(); ++i) batch_idx[i] = i * 7;
  const vit::ImageBatch batch = d.target.batch(batch_idx);
  const auto a = vit::forward(q, batch), b = vit::forward(loaded, batch);
  bool bit_identical = a.size() == b.size();
  for (std::size_t i = 0; i < a.size() && bit_identical; ++i)
    bit_identical = std::memcmp(a[i].logits.data(), b[i].logits.data(),
                                a[i].logits.size() * sizeof(double)) == 0 &&
                    a[i].attention.scores == b[i].attention.scores;
  return {streams_equal && bit_identical,
          fmt("repeated adapt metric streams %s, checkpoint round-trip %s",
              streams_equal ? "identical" : "DIFFER", bit_identical ? "bit-identical" : "DIFFERS")};
}

void print(int id, const char* name, const Outcome& o) {
  std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pacmac acceptance harness"};
  std::string out_dir = "acceptance_out";
  std::size_t seeds = 3;
  app.add_option("--out", out_dir, "Directory for per-run metrics");
  app.add_option("--seeds", seeds, "Pipeline seeds")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  const fs::path out(out_dir);
  fs::create_directories(out);

  std::vector<std::pair<int, Outcome>> results;
  auto record = [&](int id, const char* name, Outcome o) {
    print(id, name, o);
    results.emplace_back(id, std::move(o));
  };

  record(1, "gradients", gradient_suite());
  record(2, "masking oracle", masking_oracle());
  record(3, "selection truth table", truth_table());

  std::printf("desk pipeline: %zu seeds, pretrain 30 / finetune 20 / adapt 20 epochs\n", seeds);
  std::fflush(stdout);
  const auto t0 = Clock::now();
  std::vector<SeedRun> runs;
  for (std::uint64_t s = 0; s < seeds; ++s) runs.push_back(run_seed(s, out));
  const double pipeline_secs = seconds_since(t0);
  const double gap = mean_of(runs, [](const SeedRun& r) { return r.source_test - r.source_only; });
  std::printf("  domain gap: source test minus target accuracy of the source-only model %.2f points\n",
              gap);

  record(4, "pipeline trend", pipeline_trend(runs, pipeline_secs));
  record(5, "selection precision", selection_precision(runs));
  record(6, "masking mode", masking_trend(runs));
  record(7, "pretraining effect", pretraining_effect(runs));
  record(8, "metric oracles", metric_oracles());
  record(9, "determinism", determinism(runs.front().finetuned, out));

  nlohmann::json summary = nlohmann::json::array();
  bool all_pass = true;
  for (const auto& [id, o] : results) {
    summary.push_back({{"criterion", id}, {"pass", o.pass}, {"detail", o.detail}});
    all_pass = all_pass && o.pass;
  }
  std::ofstream(out / "acceptance.json") << summary.dump(2) << "\n";
  return all_pass ? 0 : 1;
}
