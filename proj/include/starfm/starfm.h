// Copyright 2026 The StaRFM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/* C interface to the StaRFM library. All functions are thread-compatible;
 * the last error message is kept per thread. */
#ifndef STARFM_STARFM_H_
#define STARFM_STARFM_H_

#include <stddef.h>
#include <stdint.h>

#if defined(STARFM_BUILDING_LIBRARY)
#define STARFM_API __attribute__((visibility("default")))
#else
#define STARFM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum starfm_status {
  STARFM_OK = 0,
  STARFM_E_USAGE = 1,
  STARFM_E_IO = 2,
  STARFM_E_INVALID_INPUT = 3,
  STARFM_E_NUMERICAL = 4,
  STARFM_E_CONFIGURATION = 5,
  STARFM_E_UNDEFINED_METRIC = 6,
  STARFM_E_INTERNAL = 7
} starfm_status;

typedef struct starfm_model starfm_model;
typedef struct starfm_experiment starfm_experiment;

STARFM_API const char* starfm_version(void);
/* Message of the last failed call on this thread; empty after success. */
STARFM_API const char* starfm_last_error(void);
/* Process exit code for a status: configuration and undefined-metric
 * errors map to 3, internal errors to 4. */
STARFM_API int starfm_exit_code(starfm_status status);

/* Metrics. Volumes are x-fastest uint8 masks (nonzero = foreground). */
STARFM_API starfm_status starfm_ece(const double* confidence, const uint8_t* correct, size_t n, size_t num_bins,
                                    double* out);
STARFM_API starfm_status starfm_dsc(const uint8_t* pred, const uint8_t* truth, size_t nx, size_t ny, size_t nz,
                                    double* out);
/* STARFM_E_UNDEFINED_METRIC when either mask is empty. spacing may be NULL. */
STARFM_API starfm_status starfm_hd95(const uint8_t* pred, const uint8_t* truth, size_t nx, size_t ny, size_t nz,
                                     const double* spacing, double* out);
STARFM_API starfm_status starfm_cmp_class(const double* probs, size_t num_classes, size_t label, double* out);
/* probs: foreground probabilities; argmax labels. */
STARFM_API starfm_status starfm_cmp_voxel(const double* probs, size_t n, double* out);
STARFM_API starfm_status starfm_bce(const double* probs, const uint8_t* truth, size_t n, double* out);
STARFM_API starfm_status starfm_soft_dice(const double* probs, const uint8_t* truth, size_t n, double* out);

/* Models. kind: "linear_softmax", "mlp1", "two_tower", "voxel_linear". */
STARFM_API starfm_status starfm_model_create(const char* kind, size_t input, size_t hidden, size_t classes,
                                             uint64_t seed, double temperature, starfm_model** out);
STARFM_API void starfm_model_free(starfm_model* model);
STARFM_API size_t starfm_model_param_count(const starfm_model* model);
STARFM_API size_t starfm_model_classes(const starfm_model* model);
STARFM_API starfm_status starfm_model_get_params(const starfm_model* model, double* out, size_t n);
STARFM_API starfm_status starfm_model_set_params(starfm_model* model, const double* values, size_t n);
/* x: n×input row-major; probs: n×classes. */
STARFM_API starfm_status starfm_model_forward(const starfm_model* model, const double* x, size_t n, double* probs);
STARFM_API starfm_status starfm_model_save(const starfm_model* model, const char* path);
STARFM_API starfm_status starfm_model_load(const char* path, starfm_model** out);

/* Experiments. */
typedef struct starfm_overrides {
  int has_seed;
  uint64_t seed;
  const char* out_dir; /* NULL: keep config value */
  const char* format;  /* NULL, "json" or "csv" */
} starfm_overrides;

STARFM_API starfm_status starfm_experiment_create(const char* config_json, const starfm_overrides* overrides,
                                                  starfm_experiment** out);
STARFM_API starfm_status starfm_experiment_open(const char* config_path, const starfm_overrides* overrides,
                                                starfm_experiment** out);
STARFM_API void starfm_experiment_free(starfm_experiment* exp);
STARFM_API const char* starfm_experiment_out_dir(const starfm_experiment* exp);
STARFM_API starfm_status starfm_experiment_gen(starfm_experiment* exp);
STARFM_API starfm_status starfm_experiment_train(starfm_experiment* exp);
STARFM_API starfm_status starfm_experiment_sweep(starfm_experiment* exp, size_t jobs);
STARFM_API starfm_status starfm_experiment_report(starfm_experiment* exp);

typedef void (*starfm_line_fn)(const char* line, void* user);
/* Runs the built-in check suite; *all_passed is set to 1 or 0. */
STARFM_API starfm_status starfm_check(uint64_t seed, starfm_line_fn on_line, void* user, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif /* STARFM_STARFM_H_ */
