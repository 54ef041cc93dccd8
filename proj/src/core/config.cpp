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

#include "pacmac/config.hpp"

#include <fstream>

#include "pacmac/error.hpp"

namespace pacmac::config {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

const char* type_label(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_unsigned()) return "non-negative integer";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

// Integer fields reject fractional values; unsigned fields reject negatives.
bool compatible(const json& base, const json& v) {
  if (base.is_number_unsigned())
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (base.is_number_integer()) return v.is_number_integer();
  if (base.is_number_float()) return v.is_number();
  return std::string_view(type_label(base)) == type_label(v);
}

json optim_json(const train::OptimConfig& o) {
  return {{"lr", o.lr},       {"weight_decay", o.weight_decay}, {"beta1", o.beta1},
          {"beta2", o.beta2}, {"epsilon", o.epsilon},           {"layer_decay", o.layer_decay}};
}

train::OptimConfig optim_from(const json& j) {
  train::OptimConfig o;
  o.lr = j.at("lr").get<double>();
  o.weight_decay = j.at("weight_decay").get<double>();
  o.beta1 = j.at("beta1").get<double>();
  o.beta2 = j.at("beta2").get<double>();
  o.epsilon = j.at("epsilon").get<double>();
  o.layer_decay = j.at("layer_decay").get<double>();
  return o;
}

void check_grid(const json& grid) {
  if (!grid.is_object()) fail(ErrorCode::kTypeError, "ablate.grid must be an object");
  const json defaults = default_json();
  for (const auto& [key, values] : grid.items()) {
    if (!values.is_array() || values.empty())
      fail(ErrorCode::kTypeError, "ablate.grid." + key + " must be a non-empty array");
    for (const auto& v : values) {
      json probe = defaults;
      json patch = override_patch(key + "=" + v.dump());
      merge_checked(probe, patch);
    }
  }
}

}  // namespace

void RunConfig::sync_seeds() {
  pretrain.seed = seed;
  finetune.seed = seed;
  adapt.seed = seed;
}

void merge_checked(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object())
    fail(ErrorCode::kTypeError, (path.empty() ? std::string("config") : path) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = join(path, key);
    if (!base.contains(key)) fail(ErrorCode::kUnknownKey, "unknown configuration key '" + where + "'");
    json& slot = base[key];
    if (where == "ablate.grid") {
      check_grid(value);
      slot = value;
    } else if (slot.is_object()) {
      merge_checked(slot, value, where);
    } else if (!compatible(slot, value)) {
      fail(ErrorCode::kTypeError, where + ": expected " + type_label(slot) + ", got " +
                                      type_label(value));
    } else {
      slot = value;
    }
  }
}

json override_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorCode::kInvalidConfig, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::size_t begin = dot == std::string::npos ? 0 : dot + 1;
    const std::string part = key.substr(begin, end - begin);
    if (part.empty()) fail(ErrorCode::kInvalidConfig, "override key '" + key + "' is malformed");
    patch = json{{part, std::move(patch)}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  return patch;
}

json to_json(const RunConfig& c) {
  const vit::ViTConfig& m = c.model;
  const pretrain::PretrainConfig& p = c.pretrain;
  const train::FinetuneConfig& f = c.finetune;
  const train::AdaptConfig& a = c.adapt;
  const reliability::SelectionConfig& s = c.adapt.select;
  const metrics::ProbeConfig& pr = c.eval.probe;

  json finetune = optim_json(f.optim);
  finetune.update({{"epochs", f.epochs},
                   {"batch_size", f.batch_size},
                   {"warmup_epochs", f.warmup_epochs},
                   {"schedule", train::to_string(f.schedule)},
                   {"final_lr", f.final_lr},
                   {"label_smoothing", f.label_smoothing},
                   {"augment", f.augment}});
  json adapt = optim_json(a.optim);
  adapt.update({{"alpha", a.alpha},
                {"epochs", a.epochs},
                {"source_batch", a.source_batch},
                {"target_batch", a.target_batch},
                {"warmup_epochs", a.warmup_epochs},
                {"schedule", train::to_string(a.schedule)},
                {"final_lr", a.final_lr},
                {"label_smoothing", a.label_smoothing},
                {"augment", a.augment},
                {"star", a.star},
                {"w_div", a.w_div},
                {"w_entmax", a.w_entmax},
                {"marginal_decay", a.marginal_decay}});

  return {
      {"seed", c.seed},
      {"out", c.out},
      {"checkpoint", c.checkpoint},
      {"model",
       {{"image_size", m.image_size},
        {"patch_size", m.patch_size},
        {"channels", m.channels},
        {"depth", m.depth},
        {"heads", m.heads},
        {"embed_dim", m.embed_dim},
        {"mlp_ratio", m.mlp_ratio},
        {"num_classes", m.num_classes},
        {"attention_layer", m.attention_layer}}},
      {"data",
       {{"classes", c.data.classes},
        {"per_class", c.data.per_class},
        {"side", c.data.side},
        {"source", c.data.source},
        {"target", c.data.target},
        {"source_style", c.data.source_style.to_json()},
        {"target_style", c.data.target_style.to_json()}}},
      {"pretrain",
       {{"mask_ratio", p.mask_ratio},
        {"epochs", p.epochs},
        {"warmup_epochs", p.warmup_epochs},
        {"batch_size", p.batch_size},
        {"lr", p.lr},
        {"final_lr", p.final_lr},
        {"weight_decay", p.weight_decay},
        {"beta1", p.beta1},
        {"beta2", p.beta2},
        {"pool_target", p.pool_target},
        {"normalize_targets", p.normalize_targets},
        {"augment", p.augment}}},
      {"finetune", finetune},
      {"adapt", adapt},
      {"select",
       {{"strategy", reliability::to_string(s.strategy)},
        {"voting", reliability::to_string(s.voting)},
        {"committee", s.committee},
        {"ratio", s.ratio},
        {"threshold", s.threshold},
        {"masking", reliability::to_string(s.masking)}}},
      {"eval",
       {{"knn_k", c.eval.knn_k},
        {"ece_bins", c.eval.ece_bins},
        {"mask_ratio", c.eval.mask_ratio},
        {"histogram_bins", c.eval.histogram_bins},
        {"probe",
         {{"train_fraction", pr.train_fraction},
          {"restarts", pr.restarts},
          {"iterations", pr.iterations},
          {"learning_rate", pr.learning_rate},
          {"l2", pr.l2},
          {"max_groups", pr.max_groups}}}}},
      {"mask_dump", {{"index", c.mask_dump_index}}},
      {"ablate", {{"grid", c.ablate_grid}}},
  };
}

json default_json() { return to_json(RunConfig{}); }

RunConfig from_json(const json& input) {
  json j = default_json();
  merge_checked(j, input);

  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out = j.at("out").get<std::string>();
    c.checkpoint = j.at("checkpoint").get<std::string>();

    const json& m = j.at("model");
    c.model.image_size = m.at("image_size").get<int>();
    c.model.patch_size = m.at("patch_size").get<int>();
    c.model.channels = m.at("channels").get<int>();
    c.model.depth = m.at("depth").get<int>();
    c.model.heads = m.at("heads").get<int>();
    c.model.embed_dim = m.at("embed_dim").get<int>();
    c.model.mlp_ratio = m.at("mlp_ratio").get<int>();
    c.model.num_classes = m.at("num_classes").get<int>();
    c.model.attention_layer = m.at("attention_layer").get<int>();

    const json& d = j.at("data");
    c.data.classes = d.at("classes").get<int>();
    c.data.per_class = d.at("per_class").get<int>();
    c.data.side = d.at("side").get<int>();
    c.data.source = d.at("source").get<std::string>();
    c.data.target = d.at("target").get<std::string>();
    c.data.source_style = data::DomainSpec::from_json(d.at("source_style"));
    c.data.target_style = data::DomainSpec::from_json(d.at("target_style"));

    const json& p = j.at("pretrain");
    c.pretrain.mask_ratio = p.at("mask_ratio").get<double>();
    c.pretrain.epochs = p.at("epochs").get<std::size_t>();
    c.pretrain.warmup_epochs = p.at("warmup_epochs").get<double>();
    c.pretrain.batch_size = p.at("batch_size").get<std::size_t>();
    c.pretrain.lr = p.at("lr").get<double>();
    c.pretrain.final_lr = p.at("final_lr").get<double>();
    c.pretrain.weight_decay = p.at("weight_decay").get<double>();
    c.pretrain.beta1 = p.at("beta1").get<double>();
    c.pretrain.beta2 = p.at("beta2").get<double>();
    c.pretrain.pool_target = p.at("pool_target").get<bool>();
    c.pretrain.augment = p.at("augment").get<bool>();
    c.pretrain.normalize_targets = p.at("normalize_targets").get<bool>();

    const json& f = j.at("finetune");
    c.finetune.optim = optim_from(f);
    c.finetune.epochs = f.at("epochs").get<std::size_t>();
    c.finetune.batch_size = f.at("batch_size").get<std::size_t>();
    c.finetune.warmup_epochs = f.at("warmup_epochs").get<double>();
    c.finetune.schedule = train::parse_schedule(f.at("schedule").get<std::string>());
    c.finetune.final_lr = f.at("final_lr").get<double>();
    c.finetune.label_smoothing = f.at("label_smoothing").get<double>();
    c.finetune.augment = f.at("augment").get<bool>();

    const json& a = j.at("adapt");
    c.adapt.optim = optim_from(a);
    c.adapt.alpha = a.at("alpha").get<double>();
    c.adapt.epochs = a.at("epochs").get<std::size_t>();
    c.adapt.source_batch = a.at("source_batch").get<std::size_t>();
    c.adapt.target_batch = a.at("target_batch").get<std::size_t>();
    c.adapt.warmup_epochs = a.at("warmup_epochs").get<double>();
    c.adapt.schedule = train::parse_schedule(a.at("schedule").get<std::string>());
    c.adapt.final_lr = a.at("final_lr").get<double>();
    c.adapt.label_smoothing = a.at("label_smoothing").get<double>();
    c.adapt.augment = a.at("augment").get<bool>();
    c.adapt.star = a.at("star").get<bool>();
    c.adapt.w_div = a.at("w_div").get<double>();
    c.adapt.w_entmax = a.at("w_entmax").get<double>();
    c.adapt.marginal_decay = a.at("marginal_decay").get<double>();

    const json& s = j.at("select");
    c.adapt.select.strategy = reliability::parse_strategy(s.at("strategy").get<std::string>());
    c.adapt.select.voting = reliability::parse_voting(s.at("voting").get<std::string>());
    c.adapt.select.committee = s.at("committee").get<std::size_t>();
    c.adapt.select.ratio = s.at("ratio").get<double>();
    c.adapt.select.threshold = s.at("threshold").get<double>();
    c.adapt.select.masking = reliability::parse_masking(s.at("masking").get<std::string>());

    const json& e = j.at("eval");
    c.eval.knn_k = e.at("knn_k").get<std::size_t>();
    c.eval.ece_bins = e.at("ece_bins").get<std::size_t>();
    c.eval.mask_ratio = e.at("mask_ratio").get<double>();
    c.eval.histogram_bins = e.at("histogram_bins").get<std::size_t>();
    const json& pr = e.at("probe");
    c.eval.probe.train_fraction = pr.at("train_fraction").get<double>();
    c.eval.probe.restarts = pr.at("restarts").get<std::size_t>();
    c.eval.probe.iterations = pr.at("iterations").get<std::size_t>();
    c.eval.probe.learning_rate = pr.at("learning_rate").get<double>();
    c.eval.probe.l2 = pr.at("l2").get<double>();
    c.eval.probe.max_groups = pr.at("max_groups").get<std::size_t>();

    c.mask_dump_index = j.at("mask_dump").at("index").get<std::size_t>();
    c.ablate_grid = j.at("ablate").at("grid");
  } catch (const json::exception& ex) {
    fail(ErrorCode::kTypeError, std::string("config: ") + ex.what());
  }
  c.sync_seeds();
  return c;
}

RunConfig parse_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json defaults = default_json();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::kFileNotFound, "config file '" + file.string() + "' not found");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    // An empty file means pure defaults.
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
      json parsed = json::parse(text, nullptr, false);
      if (parsed.is_discarded())
        fail(ErrorCode::kTypeError, "config file '" + file.string() + "' is not valid JSON");
      merge_checked(defaults, parsed);
    }
  }
  for (const auto& o : overrides) merge_checked(defaults, override_patch(o));
  return from_json(defaults);
}

}  // namespace pacmac::config
