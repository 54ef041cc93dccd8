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

#include "pacmac/pacmac.h"

#include <cstring>
#include <new>
#include <string>

#include "pacmac/config.hpp"
#include "pacmac/data.hpp"
#include "pacmac/error.hpp"
#include "pacmac/experiments.hpp"
#include "pacmac/masking.hpp"
#include "pacmac/metrics.hpp"
#include "pacmac/reliability.hpp"
#include "pacmac/train.hpp"
#include "pacmac/vit.hpp"

struct pacmac_config {
  pacmac::config::RunConfig run;
  // Kept alongside the resolved struct so later overrides keep the same
  // key and type checks.
  nlohmann::json resolved;
};

struct pacmac_dataset {
  pacmac::data::Dataset data;
};

struct pacmac_model {
  pacmac::vit::ViTParams params;
};

namespace {

thread_local std::string g_last_error;

pacmac_status record(pacmac_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename Fn>
pacmac_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return PACMAC_OK;
  } catch (const pacmac::Error& e) {
    return record(static_cast<pacmac_status>(static_cast<int>(e.code())), e.what());
  } catch (const std::bad_alloc&) {
    return record(PACMAC_ERR_OUT_OF_MEMORY, "out of memory");
  } catch (const std::exception& e) {
    return record(PACMAC_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define PACMAC_REQUIRE(ptr)                                                         \
  do {                                                                              \
    if ((ptr) == nullptr) return record(PACMAC_ERR_NULL_ARGUMENT, #ptr " is NULL"); \
  } while (0)

}  // namespace

extern "C" {

const char* pacmac_version(void) { return "0.1.0"; }

const char* pacmac_status_name(pacmac_status status) {
  switch (status) {
    case PACMAC_OK: return "OK";
    case PACMAC_ERR_NULL_ARGUMENT: return "NullArgument";
    case PACMAC_ERR_OUT_OF_MEMORY: return "OutOfMemory";
    case PACMAC_ERR_INTERNAL: return "Internal";
    default: break;
  }
  if (status >= PACMAC_ERR_SHAPE_MISMATCH && status <= PACMAC_ERR_UNKNOWN_COMMAND)
    return pacmac::error_code_name(static_cast<pacmac::ErrorCode>(static_cast<int>(status)));
  return "Unknown";
}

const char* pacmac_last_error(void) { return g_last_error.c_str(); }

void pacmac_string_free(char* s) { std::free(s); }

pacmac_status pacmac_config_load(const char* path, const char* const* overrides,
                                 size_t override_count, pacmac_config** out) {
  PACMAC_REQUIRE(out);
  *out = nullptr;
  if (override_count > 0) PACMAC_REQUIRE(overrides);
  return guarded([&] {
    std::vector<std::string> list;
    for (size_t i = 0; i < override_count; ++i) {
      if (overrides[i] == nullptr) pacmac::fail(pacmac::ErrorCode::kInvalidConfig, "NULL override");
      list.emplace_back(overrides[i]);
    }
    auto cfg = std::make_unique<pacmac_config>();
    cfg->run = pacmac::config::parse_config(path == nullptr ? "" : path, list);
    cfg->resolved = pacmac::config::to_json(cfg->run);
    *out = cfg.release();
  });
}

pacmac_status pacmac_config_set(pacmac_config* config, const char* assignment) {
  PACMAC_REQUIRE(config);
  PACMAC_REQUIRE(assignment);
  return guarded([&] {
    nlohmann::json next = config->resolved;
    pacmac::config::merge_checked(next, pacmac::config::override_patch(assignment));
    config->run = pacmac::config::from_json(next);
    config->resolved = pacmac::config::to_json(config->run);
  });
}

pacmac_status pacmac_config_to_json(const pacmac_config* config, char** json_out) {
  PACMAC_REQUIRE(config);
  PACMAC_REQUIRE(json_out);
  return guarded([&] { *json_out = dup_string(config->resolved.dump(2)); });
}

void pacmac_config_free(pacmac_config* config) { delete config; }

int pacmac_is_command(const char* name) {
  return name != nullptr && pacmac::experiments::is_command(name) ? 1 : 0;
}

pacmac_status pacmac_run(const char* command, const pacmac_config* config, char** summary_out) {
  PACMAC_REQUIRE(command);
  PACMAC_REQUIRE(config);
  return guarded([&] {
    const auto summary = pacmac::experiments::run(command, config->run);
    if (summary_out != nullptr) *summary_out = dup_string(summary.dump(2));
  });
}

pacmac_status pacmac_dataset_generate(int classes, int per_class, const char* domain,
                                      uint64_t seed, pacmac_dataset** out) {
  PACMAC_REQUIRE(domain);
  PACMAC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    const std::string d = domain;
    if (d != "source" && d != "target")
      pacmac::fail(pacmac::ErrorCode::kInvalidSpec, "domain must be source or target");
    const auto spec = d == "source" ? pacmac::data::source_spec() : pacmac::data::target_spec();
    *out = new pacmac_dataset{pacmac::data::generate_synthetic(classes, per_class, spec, seed)};
  });
}

pacmac_status pacmac_dataset_load(const char* dir, pacmac_dataset** out) {
  PACMAC_REQUIRE(dir);
  PACMAC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] { *out = new pacmac_dataset{pacmac::data::load_dataset(dir)}; });
}

pacmac_status pacmac_dataset_save(const pacmac_dataset* dataset, const char* dir) {
  PACMAC_REQUIRE(dataset);
  PACMAC_REQUIRE(dir);
  return guarded([&] { pacmac::data::save_dataset(dataset->data, dir); });
}

pacmac_status pacmac_dataset_info(const pacmac_dataset* dataset, size_t* count, size_t* channels,
                                  size_t* side, int* classes, int* has_labels) {
  PACMAC_REQUIRE(dataset);
  const auto& d = dataset->data;
  if (count) *count = d.count;
  if (channels) *channels = d.channels;
  if (side) *side = d.height;
  if (classes) *classes = d.num_classes;
  if (has_labels) *has_labels = d.has_labels ? 1 : 0;
  return PACMAC_OK;
}

pacmac_status pacmac_dataset_labels(const pacmac_dataset* dataset, int* labels_out,
                                    size_t capacity) {
  PACMAC_REQUIRE(dataset);
  PACMAC_REQUIRE(labels_out);
  const auto& d = dataset->data;
  if (!d.has_labels) return record(PACMAC_ERR_INVALID_CONFIG, "dataset has no labels");
  if (capacity < d.count) return record(PACMAC_ERR_LENGTH_MISMATCH, "labels buffer too small");
  std::copy(d.labels.begin(), d.labels.end(), labels_out);
  return PACMAC_OK;
}

void pacmac_dataset_free(pacmac_dataset* dataset) { delete dataset; }

pacmac_status pacmac_model_init(const char* model_json, uint64_t seed, pacmac_model** out) {
  PACMAC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    nlohmann::json patch = nlohmann::json::object();
    if (model_json != nullptr && *model_json != '\0') {
      auto parsed = nlohmann::json::parse(model_json, nullptr, false);
      if (parsed.is_discarded())
        pacmac::fail(pacmac::ErrorCode::kTypeError, "model description is not valid JSON");
      patch = {{"model", parsed}};
    }
    const auto cfg = pacmac::config::from_json(patch);
    *out = new pacmac_model{pacmac::vit::init_params(cfg.model, seed)};
  });
}

pacmac_status pacmac_model_load(const char* path, pacmac_model** out) {
  PACMAC_REQUIRE(path);
  PACMAC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] { *out = new pacmac_model{pacmac::vit::load_checkpoint(path)}; });
}

pacmac_status pacmac_model_save(const pacmac_model* model, const char* path) {
  PACMAC_REQUIRE(model);
  PACMAC_REQUIRE(path);
  return guarded([&] { pacmac::vit::save_checkpoint(model->params, path); });
}

pacmac_status pacmac_model_predict(const pacmac_model* model, const pacmac_dataset* dataset,
                                   int* predictions, double* confidences, size_t capacity) {
  PACMAC_REQUIRE(model);
  PACMAC_REQUIRE(dataset);
  if (capacity < dataset->data.count)
    return record(PACMAC_ERR_LENGTH_MISMATCH, "output buffers hold fewer entries than images");
  return guarded([&] {
    const auto results = pacmac::train::predict(model->params, dataset->data);
    for (size_t i = 0; i < results.size(); ++i) {
      if (predictions) predictions[i] = results[i].prediction();
      if (confidences) confidences[i] = results[i].confidence();
    }
  });
}

pacmac_status pacmac_model_embed(const pacmac_model* model, const pacmac_dataset* dataset,
                                 double* out, size_t capacity, size_t* embed_dim) {
  PACMAC_REQUIRE(model);
  PACMAC_REQUIRE(dataset);
  const auto dim = static_cast<size_t>(model->params.config.embed_dim);
  if (embed_dim) *embed_dim = dim;
  if (out == nullptr) return PACMAC_OK;
  if (capacity < dataset->data.count * dim)
    return record(PACMAC_ERR_LENGTH_MISMATCH, "embedding buffer too small");
  return guarded([&] {
    const auto results = pacmac::train::predict(model->params, dataset->data);
    for (size_t i = 0; i < results.size(); ++i)
      std::copy(results[i].cls_embedding.begin(), results[i].cls_embedding.end(), out + i * dim);
  });
}

void pacmac_model_free(pacmac_model* model) { delete model; }

pacmac_status pacmac_attention_masks(const double* attention, size_t patches, double ratio,
                                     size_t committee, size_t* kept_out, size_t capacity,
                                     size_t* kept_per_mask) {
  PACMAC_REQUIRE(attention);
  PACMAC_REQUIRE(kept_out);
  return guarded([&] {
    const auto set = pacmac::masking::attention_conditioned_masks(
        std::span<const double>(attention, patches), ratio, committee);
    const size_t l = set.kept_per_mask();
    if (kept_per_mask) *kept_per_mask = l;
    if (capacity < committee * l)
      pacmac::fail(pacmac::ErrorCode::kLengthMismatch, "kept buffer too small");
    for (size_t m = 0; m < committee; ++m)
      std::copy(set.kept[m].begin(), set.kept[m].end(), kept_out + m * l);
  });
}

pacmac_status pacmac_assess(int clean_prediction, double clean_confidence,
                            const int* masked_predictions, size_t committee, const char* strategy,
                            const char* voting, double threshold, int true_label, int* reliable,
                            int* training_view) {
  PACMAC_REQUIRE(strategy);
  PACMAC_REQUIRE(voting);
  if (committee > 0) PACMAC_REQUIRE(masked_predictions);
  return guarded([&] {
    pacmac::reliability::SelectionConfig cfg;
    cfg.strategy = pacmac::reliability::parse_strategy(strategy);
    cfg.voting = pacmac::reliability::parse_voting(voting);
    cfg.committee = committee;
    cfg.threshold = threshold;
    std::optional<int> label;
    if (true_label >= 0) label = true_label;
    const auto v = pacmac::reliability::assess_reliability(
        clean_prediction, clean_confidence, std::span<const int>(masked_predictions, committee),
        cfg, label);
    if (reliable) *reliable = v.reliable ? 1 : 0;
    if (training_view) *training_view = v.training_view;
  });
}

pacmac_status pacmac_ece(const double* confidences, const uint8_t* correct, size_t n, size_t bins,
                         double* ece_out) {
  PACMAC_REQUIRE(ece_out);
  if (n > 0) {
    PACMAC_REQUIRE(confidences);
    PACMAC_REQUIRE(correct);
  }
  return guarded([&] {
    *ece_out = pacmac::metrics::ece(std::span<const double>(confidences, n),
                                    std::span<const std::uint8_t>(correct, n), bins)
                   .ece;
  });
}

pacmac_status pacmac_knn(const double* source, const int* source_labels, size_t source_count,
                         const double* target, const int* target_labels, size_t target_count,
                         size_t dim, size_t k, double* accuracy_out) {
  PACMAC_REQUIRE(source);
  PACMAC_REQUIRE(source_labels);
  PACMAC_REQUIRE(target);
  PACMAC_REQUIRE(target_labels);
  PACMAC_REQUIRE(accuracy_out);
  return guarded([&] {
    auto rows = [dim](const double* p, size_t n) {
      pacmac::metrics::Features f(n);
      for (size_t i = 0; i < n; ++i) f[i].assign(p + i * dim, p + (i + 1) * dim);
      return f;
    };
    *accuracy_out = pacmac::metrics::knn_cross_domain(
                        rows(source, source_count), std::span<const int>(source_labels, source_count),
                        rows(target, target_count), std::span<const int>(target_labels, target_count), k)
                        .accuracy;
  });
}

pacmac_status pacmac_pearson(const double* xs, const double* ys, size_t n, double* r_out) {
  PACMAC_REQUIRE(r_out);
  if (n > 0) {
    PACMAC_REQUIRE(xs);
    PACMAC_REQUIRE(ys);
  }
  return guarded([&] {
    *r_out = pacmac::metrics::pearson(std::span<const double>(xs, n), std::span<const double>(ys, n));
  });
}

pacmac_status pacmac_da_score(double c3, double c4, double c5, double* score_out) {
  PACMAC_REQUIRE(score_out);
  *score_out = pacmac::metrics::da_score(c3, c4, c5);
  return PACMAC_OK;
}

}  // extern "C"
