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

// Run configuration: built-in defaults, a JSON file, then key=value overrides.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pacmac/data.hpp"
#include "pacmac/metrics.hpp"
#include "pacmac/pretrain.hpp"
#include "pacmac/train.hpp"
#include "pacmac/vit.hpp"

namespace pacmac::config {

struct DataConfig {
  int classes = 8;
  int per_class = 250;
  int side = 32;
  /// Dataset directories; gen-data writes <out>/source and <out>/target.
  std::string source;
  std::string target;
  data::DomainSpec source_style = data::source_spec();
  data::DomainSpec target_style = data::target_spec();
};

struct EvalConfig {
  std::size_t knn_k = 7;
  std::size_t ece_bins = 15;
  double mask_ratio = 0.75;
  std::size_t histogram_bins = 20;
  metrics::ProbeConfig probe;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out;
  /// Input checkpoint for every stage after the first.
  std::string checkpoint;
  vit::ViTConfig model;
  DataConfig data;
  pretrain::PretrainConfig pretrain;
  train::FinetuneConfig finetune;
  train::AdaptConfig adapt;  // adapt.select mirrors the "select" group
  EvalConfig eval;
  std::size_t mask_dump_index = 0;
  /// Dotted key -> list of values; ablate runs adapt on the cartesian product.
  nlohmann::json ablate_grid = nlohmann::json::object();

  /// Seeds of the stage configs follow `seed`.
  void sync_seeds();
};

nlohmann::json default_json();
nlohmann::json to_json(const RunConfig& config);
/// Throws UnknownKey and TypeError for anything the defaults do not contain
/// with a compatible type.
RunConfig from_json(const nlohmann::json& j);

/// Deep merge of `patch` into `base` with the same key and type checks.
void merge_checked(nlohmann::json& base, const nlohmann::json& patch, const std::string& path = "");

/// "a.b=value"; the value is read as JSON when it parses, else as a string.
nlohmann::json override_patch(const std::string& assignment);

/// Defaults, then the file (if non-empty), then the overrides in order.
/// Throws FileNotFound, UnknownKey, TypeError.
RunConfig parse_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace pacmac::config
