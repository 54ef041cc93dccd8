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

/* C interface to the pacmac library. Objects are opaque handles released by
 * their *_free function; every fallible call returns a pacmac_status and
 * leaves a message for pacmac_last_error() on failure. Strings handed out by
 * the library are released with pacmac_string_free. */

#ifndef PACMAC_PACMAC_H_
#define PACMAC_PACMAC_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PACMAC_API __declspec(dllexport)
#else
#define PACMAC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values 1..27 mirror pacmac::ErrorCode. */
typedef enum pacmac_status {
  PACMAC_OK = 0,
  PACMAC_ERR_SHAPE_MISMATCH = 1,
  PACMAC_ERR_INVALID_ATTRIBUTE = 2,
  PACMAC_ERR_NOT_SCALAR = 3,
  PACMAC_ERR_UNTRACKED_ROOT = 4,
  PACMAC_ERR_NON_FINITE = 5,
  PACMAC_ERR_INVALID_CONFIG = 6,
  PACMAC_ERR_INVALID_MASK_CONFIG = 7,
  PACMAC_ERR_LENGTH_MISMATCH = 8,
  PACMAC_ERR_COMMITTEE_SIZE_MISMATCH = 9,
  PACMAC_ERR_ORACLE_WITHOUT_LABEL = 10,
  PACMAC_ERR_EMPTY_DATASET = 11,
  PACMAC_ERR_EMPTY_BATCH = 12,
  PACMAC_ERR_INVALID_SPEC = 13,
  PACMAC_ERR_CORRUPT_MANIFEST = 14,
  PACMAC_ERR_MAGIC_MISMATCH = 15,
  PACMAC_ERR_TRUNCATED_PAYLOAD = 16,
  PACMAC_ERR_EMPTY_INPUT = 17,
  PACMAC_ERR_DIMENSION_MISMATCH = 18,
  PACMAC_ERR_INSUFFICIENT_DATA = 19,
  PACMAC_ERR_ZERO_VARIANCE = 20,
  PACMAC_ERR_EMPTY_GROUP = 21,
  PACMAC_ERR_OUT_OF_RANGE = 22,
  PACMAC_ERR_UNKNOWN_KEY = 23,
  PACMAC_ERR_TYPE_ERROR = 24,
  PACMAC_ERR_FILE_NOT_FOUND = 25,
  PACMAC_ERR_IO = 26,
  PACMAC_ERR_UNKNOWN_COMMAND = 27,
  PACMAC_ERR_NULL_ARGUMENT = 100,
  PACMAC_ERR_OUT_OF_MEMORY = 101,
  PACMAC_ERR_INTERNAL = 102
} pacmac_status;

typedef struct pacmac_config pacmac_config;
typedef struct pacmac_dataset pacmac_dataset;
typedef struct pacmac_model pacmac_model;

PACMAC_API const char* pacmac_version(void);
PACMAC_API const char* pacmac_status_name(pacmac_status status);
/* Message of the last failure on the calling thread ("" if none). */
PACMAC_API const char* pacmac_last_error(void);
PACMAC_API void pacmac_string_free(char* s);

/* ---- configuration and commands ---- */

/* path may be NULL or "" for pure defaults. */
PACMAC_API pacmac_status pacmac_config_load(const char* path, const char* const* overrides,
                                            size_t override_count, pacmac_config** out);
/* One "dotted.key=value" override. */
PACMAC_API pacmac_status pacmac_config_set(pacmac_config* config, const char* assignment);
PACMAC_API pacmac_status pacmac_config_to_json(const pacmac_config* config, char** json_out);
PACMAC_API void pacmac_config_free(pacmac_config* config);

PACMAC_API int pacmac_is_command(const char* name);
/* summary_out may be NULL. */
PACMAC_API pacmac_status pacmac_run(const char* command, const pacmac_config* config,
                                    char** summary_out);

/* ---- datasets ---- */

/* domain is "source" or "target" and picks the built-in style. */
PACMAC_API pacmac_status pacmac_dataset_generate(int classes, int per_class, const char* domain,
                                                 uint64_t seed, pacmac_dataset** out);
PACMAC_API pacmac_status pacmac_dataset_load(const char* dir, pacmac_dataset** out);
PACMAC_API pacmac_status pacmac_dataset_save(const pacmac_dataset* dataset, const char* dir);
/* Any output pointer may be NULL. */
PACMAC_API pacmac_status pacmac_dataset_info(const pacmac_dataset* dataset, size_t* count,
                                             size_t* channels, size_t* side, int* classes,
                                             int* has_labels);
/* labels_out holds count entries. */
PACMAC_API pacmac_status pacmac_dataset_labels(const pacmac_dataset* dataset, int* labels_out,
                                               size_t capacity);
PACMAC_API void pacmac_dataset_free(pacmac_dataset* dataset);

/* ---- models ---- */

/* model_json is the "model" config group (NULL for defaults). */
PACMAC_API pacmac_status pacmac_model_init(const char* model_json, uint64_t seed,
                                           pacmac_model** out);
PACMAC_API pacmac_status pacmac_model_load(const char* path, pacmac_model** out);
PACMAC_API pacmac_status pacmac_model_save(const pacmac_model* model, const char* path);
/* Writes one prediction and confidence per image; either array may be NULL. */
PACMAC_API pacmac_status pacmac_model_predict(const pacmac_model* model,
                                              const pacmac_dataset* dataset, int* predictions,
                                              double* confidences, size_t capacity);
/* Class-token embeddings, count x embed_dim row-major. */
PACMAC_API pacmac_status pacmac_model_embed(const pacmac_model* model,
                                            const pacmac_dataset* dataset, double* out,
                                            size_t capacity, size_t* embed_dim);
PACMAC_API void pacmac_model_free(pacmac_model* model);

/* ---- masking and selection ---- */

/* kept_out receives committee x kept_per_mask patch indices in pop order. */
PACMAC_API pacmac_status pacmac_attention_masks(const double* attention, size_t patches,
                                                double ratio, size_t committee,
                                                size_t* kept_out, size_t capacity,
                                                size_t* kept_per_mask);
/* true_label < 0 means no label. training_view is -1 when unreliable. */
PACMAC_API pacmac_status pacmac_assess(int clean_prediction, double clean_confidence,
                                       const int* masked_predictions, size_t committee,
                                       const char* strategy, const char* voting,
                                       double threshold, int true_label, int* reliable,
                                       int* training_view);

/* ---- metrics ---- */

PACMAC_API pacmac_status pacmac_ece(const double* confidences, const uint8_t* correct, size_t n,
                                    size_t bins, double* ece_out);
PACMAC_API pacmac_status pacmac_knn(const double* source, const int* source_labels,
                                    size_t source_count, const double* target,
                                    const int* target_labels, size_t target_count, size_t dim,
                                    size_t k, double* accuracy_out);
PACMAC_API pacmac_status pacmac_pearson(const double* xs, const double* ys, size_t n,
                                        double* r_out);
PACMAC_API pacmac_status pacmac_da_score(double c3, double c4, double c5, double* score_out);

#ifdef __cplusplus
}
#endif

#endif /* PACMAC_PACMAC_H_ */
