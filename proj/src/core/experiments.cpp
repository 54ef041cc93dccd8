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

#include "pacmac/experiments.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>

#include "pacmac/error.hpp"
#include "pacmac/masking.hpp"
#include "pacmac/parallel.hpp"
#include "pacmac/random.hpp"
#include "pacmac/reliability.hpp"

namespace pacmac::experiments {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kTargetDataTag = 0x7a49;
constexpr std::uint64_t kSourceTestTag = 0x7e57;
constexpr std::uint64_t kDistanceTag = 0xd157;
constexpr std::uint64_t kProbeTag = 0x9e0b;
constexpr std::uint64_t kDumpMaskTag = 0x3d3d;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path output_dir(const config::RunConfig& c) {
  if (c.out.empty()) fail(ErrorCode::kInvalidConfig, "no output directory (set out or --out)");
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

data::Dataset require_dataset(const std::string& path, const char* key) {
  if (path.empty()) fail(ErrorCode::kInvalidConfig, std::string(key) + " is not set");
  return data::load_dataset(path);
}

vit::ViTParams model_for(const config::RunConfig& c, bool allow_fresh) {
  if (!c.checkpoint.empty()) return vit::load_checkpoint(c.checkpoint);
  if (!allow_fresh) fail(ErrorCode::kInvalidConfig, "checkpoint is not set");
  return vit::init_params(c.model, c.seed);
}

void check_classes(const vit::ViTParams& p, const data::Dataset& d) {
  if (d.has_labels && d.num_classes != p.config.num_classes)
    fail(ErrorCode::kShapeMismatch, "dataset '" + d.domain + "' has " +
                                        std::to_string(d.num_classes) + " classes, model has " +
                                        std::to_string(p.config.num_classes));
}

std::string epochs_csv(const std::vector<train::EpochMetrics>& history) {
  std::string s = std::string(train::kMetricsCsvHeader) + "\n";
  for (const auto& m : history) s += train::metrics_csv_row(m) + "\n";
  return s;
}

json last_epoch_json(const std::vector<train::EpochMetrics>& history) {
  if (history.empty()) return json::object();
  const auto& m = history.back();
  json j = {{"epochs", m.epoch},
            {"source_loss", m.source_loss},
            {"target_loss", m.target_loss},
            {"train_accuracy", m.train_accuracy},
            {"fraction_selected", m.fraction_selected},
            {"pseudolabel_accuracy", m.pseudolabel_accuracy}};
  j["selection_precision"] = m.selection_precision_defined ? json(m.selection_precision) : json();
  j["target_accuracy"] = m.target_accuracy ? json(*m.target_accuracy) : json();
  return j;
}

metrics::Features embeddings(const vit::ViTParams& params, const data::Dataset& d) {
  metrics::Features out;
  out.reserve(d.count);
  for (const auto& r : train::predict(params, d)) out.push_back(r.cls_embedding);
  return out;
}

json gen_data(const config::RunConfig& c, const fs::path& dir) {
  const data::Dataset source =
      data::generate_synthetic(c.data.classes, c.data.per_class, c.data.source_style, c.seed,
                               c.data.side);
  // Held-out source images measure the in-domain accuracy the shift is
  // compared against.
  const data::Dataset source_test = data::generate_synthetic(
      c.data.classes, std::max(1, c.data.per_class / 5), c.data.source_style,
      derive_seed(c.seed, {kSourceTestTag}), c.data.side);
  const data::Dataset target =
      data::generate_synthetic(c.data.classes, c.data.per_class, c.data.target_style,
                               derive_seed(c.seed, {kTargetDataTag}), c.data.side);
  data::save_dataset(source, dir / "source");
  data::save_dataset(source_test, dir / "source_test");
  data::save_dataset(target, dir / "target");
  return {{"source", (dir / "source").string()},
          {"source_test", (dir / "source_test").string()},
          {"target", (dir / "target").string()},
          {"count", {{"source", source.count}, {"source_test", source_test.count},
                     {"target", target.count}}}};
}

json run_pretrain(const config::RunConfig& c, const fs::path& dir) {
  const data::Dataset source = require_dataset(c.data.source, "data.source");
  std::optional<data::Dataset> target;
  if (!c.data.target.empty()) target = data::load_dataset(c.data.target);
  vit::ViTParams params = model_for(c, true);

  std::optional<double> knn_before;
  const bool labeled_pair = target && target->has_labels && source.has_labels;
  if (labeled_pair) knn_before = knn_accuracy(params, source, *target, c.eval.knn_k);

  std::string csv = "epoch,lr,loss\n";
  const auto history = pretrain::pretrain_in_domain(
      params, source, target ? &*target : nullptr, c.pretrain, [&](const pretrain::PretrainEpoch& e) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", e.epoch, e.lr, e.loss);
        csv += buf;
      });
  write_text(dir / "metrics.csv", csv);
  vit::save_checkpoint(params, dir / "model.pmc");

  json s = {{"checkpoint", (dir / "model.pmc").string()},
            {"final_loss", history.empty() ? json() : json(history.back().loss)}};
  if (labeled_pair) {
    s["knn_before"] = *knn_before;
    s["knn_after"] = knn_accuracy(params, source, *target, c.eval.knn_k);
  }
  return s;
}

json run_finetune(const config::RunConfig& c, const fs::path& dir) {
  const data::Dataset source = require_dataset(c.data.source, "data.source");
  std::optional<data::Dataset> target;
  if (!c.data.target.empty()) target = data::load_dataset(c.data.target);
  vit::ViTParams params = model_for(c, true);
  check_classes(params, source);
  const data::Dataset* eval = target && target->has_labels ? &*target : nullptr;
  const auto history = train::finetune_source(params, source, c.finetune, eval);
  write_text(dir / "metrics.csv", epochs_csv(history));
  vit::save_checkpoint(params, dir / "model.pmc");
  json s = last_epoch_json(history);
  s["checkpoint"] = (dir / "model.pmc").string();
  return s;
}

json run_adapt(const config::RunConfig& c, const fs::path& dir) {
  const data::Dataset source = require_dataset(c.data.source, "data.source");
  const data::Dataset target = require_dataset(c.data.target, "data.target");
  vit::ViTParams params = model_for(c, false);
  check_classes(params, source);
  train::AdaptTrace trace;
  // Target labels, when the files carry them, only feed diagnostics and the
  // oracle strategy.
  const auto history = train::adapt_pacmac(params, source, target.unlabeled(), c.adapt,
                                           target.labels, {}, &trace);
  write_text(dir / "metrics.csv", epochs_csv(history));
  std::string lines;
  for (std::size_t i = 0; i < trace.verdicts.size(); ++i)
    lines += reliability::verdict_to_json(trace.target_index[i], trace.verdicts[i]).dump() + "\n";
  write_text(dir / "verdicts.jsonl", lines);
  vit::save_checkpoint(params, dir / "model.pmc");
  json s = last_epoch_json(history);
  s["checkpoint"] = (dir / "model.pmc").string();
  s["strategy"] = reliability::to_string(c.adapt.select.strategy);
  return s;
}

json run_eval(const config::RunConfig& c, const fs::path& dir) {
  const data::Dataset target = require_dataset(c.data.target, "data.target");
  if (!target.has_labels) fail(ErrorCode::kInvalidConfig, "eval needs a labeled target dataset");
  const vit::ViTParams params = model_for(c, false);
  check_classes(params, target);

  const auto results = train::predict(params, target);
  std::vector<int> preds;
  std::vector<double> conf;
  std::vector<std::uint8_t> correct;
  std::string csv = "index,label,prediction,confidence\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    preds.push_back(results[i].prediction());
    conf.push_back(results[i].confidence());
    correct.push_back(preds.back() == target.labels[i] ? 1 : 0);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%d,%d,%.9g\n", i, target.labels[i], preds.back(),
                  conf.back());
    csv += buf;
  }
  write_text(dir / "predictions.csv", csv);
  const auto acc = metrics::accuracy(preds, target.labels, target.num_classes);
  const auto cal = metrics::ece(conf, correct, c.eval.ece_bins);
  const auto dist = metrics::embedding_distance_stats(params, target, c.eval.mask_ratio,
                                                      derive_seed(c.seed, {kDistanceTag}),
                                                      c.eval.histogram_bins);
  write_json(dir / "accuracy.json", acc.to_json());
  write_json(dir / "ece.json", cal.to_json());
  write_json(dir / "distance.json", dist.to_json());
  write_text(dir / "distance_hist.csv", dist.histogram_csv());

  json s = {{"accuracy", acc.overall}, {"ece", cal.ece},
            {"distance_correct", dist.correct_defined ? json(dist.mean_correct) : json()},
            {"distance_incorrect", dist.incorrect_defined ? json(dist.mean_incorrect) : json()}};
  if (!c.data.source.empty()) {
    const data::Dataset source = data::load_dataset(c.data.source);
    if (source.has_labels) s["knn"] = knn_accuracy(params, source, target, c.eval.knn_k);
  }
  return s;
}

json run_probe(const config::RunConfig& c, const fs::path& dir) {
  const data::Dataset source = require_dataset(c.data.source, "data.source");
  const data::Dataset target = require_dataset(c.data.target, "data.target");
  if (!source.has_labels || !target.has_labels)
    fail(ErrorCode::kInvalidConfig, "probe needs labeled source and target datasets");
  const vit::ViTParams params = model_for(c, false);
  metrics::Features features = embeddings(params, source);
  metrics::Features tf = embeddings(params, target);
  features.insert(features.end(), tf.begin(), tf.end());
  std::vector<int> domains(source.count, 0), classes = source.labels;
  domains.resize(source.count + target.count, 1);
  classes.insert(classes.end(), target.labels.begin(), target.labels.end());
  const auto report =
      metrics::da_score_probe(features, domains, classes, derive_seed(c.seed, {kProbeTag}), c.eval.probe);
  write_json(dir / "da_score.json", report.to_json());
  return report.to_json();
}

json run_mask_dump(const config::RunConfig& c, const fs::path& dir) {
  const std::string& path = c.data.target.empty() ? c.data.source : c.data.target;
  const data::Dataset d = require_dataset(path, "data.target");
  if (c.mask_dump_index >= d.count)
    fail(ErrorCode::kOutOfRange, "mask_dump.index " + std::to_string(c.mask_dump_index) +
                                     " beyond " + std::to_string(d.count) + " images");
  const vit::ViTParams params = model_for(c, false);
  const reliability::SelectionConfig& sel = c.adapt.select;
  const std::size_t i = c.mask_dump_index;
  const std::array<std::size_t, 1> one = {i};
  const vit::ImageBatch image = d.batch(one);
  const vit::ForwardResult clean = vit::forward(params, image)[0];
  const masking::MaskSet masks =
      sel.masking == reliability::MaskingMode::kAttention
          ? masking::attention_conditioned_masks(clean.attention, sel.ratio, sel.committee)
          : masking::random_masks(params.config.num_patches(), sel.ratio, sel.committee,
                                  derive_seed(c.seed, {kDumpMaskTag, i}));
  const auto views = train::masked_views(image.image(0), params.config, masks.masks);
  vit::ImageBatch batch{0, image.channels, image.height, image.width, {}};
  for (const auto& v : views) batch.push_back(v);
  const auto masked = vit::forward(params, batch);

  std::optional<int> label;
  if (d.has_labels) label = d.labels[i];
  json view_list = json::array();
  for (const auto& r : masked)
    view_list.push_back({{"prediction", r.prediction()}, {"confidence", r.confidence()}});
  const auto verdict = reliability::assess_reliability(clean, masked, sel, label);
  json out = masking::to_json(masks);
  out["index"] = i;
  out["masking"] = reliability::to_string(sel.masking);
  out["attention"] = clean.attention.scores;
  out["clean"] = {{"prediction", clean.prediction()}, {"confidence", clean.confidence()}};
  out["views"] = view_list;
  out["verdict"] = reliability::verdict_to_json(i, verdict);
  if (label) out["label"] = *label;
  write_json(dir / "masks.json", out);
  return out;
}

std::string csv_cell(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

json run_ablate(const config::RunConfig& c, const fs::path& dir) {
  const json& grid = c.ablate_grid;
  if (grid.empty()) fail(ErrorCode::kInvalidConfig, "ablate.grid is empty");
  std::vector<std::string> keys;
  std::vector<std::vector<json>> values;
  for (const auto& [k, v] : grid.items()) {
    keys.push_back(k);
    values.emplace_back(v.begin(), v.end());
  }
  std::size_t cells = 1;
  for (const auto& v : values) cells *= v.size();

  // Cells differ only by their overrides; each gets its own directory.
  std::vector<std::vector<json>> chosen(cells);
  std::vector<config::RunConfig> configs(cells);
  const json base = config::to_json(c);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    json resolved = base;
    std::size_t rest = cell;
    for (std::size_t k = keys.size(); k-- > 0;) {
      const json& v = values[k][rest % values[k].size()];
      rest /= values[k].size();
      chosen[cell].insert(chosen[cell].begin(), v);
      config::merge_checked(resolved, config::override_patch(keys[k] + "=" + v.dump()));
    }
    resolved["ablate"]["grid"] = json::object();
    char name[32];
    std::snprintf(name, sizeof name, "cell_%03zu", cell);
    resolved["out"] = (dir / name).string();
    configs[cell] = config::from_json(resolved);
  }

  std::vector<json> summaries(cells);
  parallel_for(cells, [&](std::size_t cell) { summaries[cell] = run("adapt", configs[cell]); });

  std::string csv = "cell";
  for (const auto& k : keys) csv += "," + k;
  csv += ",target_accuracy,selection_precision,fraction_selected\n";
  json rows = json::array();
  for (std::size_t cell = 0; cell < cells; ++cell) {
    csv += std::to_string(cell);
    json row = {{"cell", cell}};
    for (std::size_t k = 0; k < keys.size(); ++k) {
      csv += "," + csv_cell(chosen[cell][k]);
      row[keys[k]] = chosen[cell][k];
    }
    const json& s = summaries[cell];
    for (const char* f : {"target_accuracy", "selection_precision", "fraction_selected"}) {
      csv += ",";
      if (s.contains(f) && !s[f].is_null()) csv += csv_cell(s[f]);
      row[f] = s.value(f, json());
    }
    csv += "\n";
    rows.push_back(row);
  }
  write_text(dir / "summary.csv", csv);
  return {{"cells", rows}};
}

std::string strip_code_prefix(const Error& e) {
  const std::string what = e.what();
  const std::string prefix = std::string(error_code_name(e.code())) + ": ";
  return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

}  // namespace

bool is_command(std::string_view name) {
  return std::find(kCommands.begin(), kCommands.end(), name) != kCommands.end();
}

double knn_accuracy(const vit::ViTParams& params, const data::Dataset& source,
                    const data::Dataset& target, std::size_t k) {
  return metrics::knn_cross_domain(embeddings(params, source), source.labels,
                                   embeddings(params, target), target.labels, k)
      .accuracy;
}

json run(std::string_view command, const config::RunConfig& config) {
  if (!is_command(command))
    fail(ErrorCode::kUnknownCommand, "unknown command '" + std::string(command) + "'");
  try {
    const fs::path dir = output_dir(config);
    write_json(dir / "resolved.json", config::to_json(config));
    json summary;
    if (command == "gen-data") summary = gen_data(config, dir);
    else if (command == "pretrain") summary = run_pretrain(config, dir);
    else if (command == "finetune") summary = run_finetune(config, dir);
    else if (command == "adapt") summary = run_adapt(config, dir);
    else if (command == "eval") summary = run_eval(config, dir);
    else if (command == "probe") summary = run_probe(config, dir);
    else if (command == "mask-dump") summary = run_mask_dump(config, dir);
    else summary = run_ablate(config, dir);
    summary["command"] = std::string(command);
    write_json(dir / "summary.json", summary);
    return summary;
  } catch (const Error& e) {
    throw Error(e.code(), std::string(command) + ": " + strip_code_prefix(e));
  }
}

}  // namespace pacmac::experiments
