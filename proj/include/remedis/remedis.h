// Copyright 2026 The Remedis Authors.
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

#ifndef REMEDIS_REMEDIS_H_
#define REMEDIS_REMEDIS_H_

/* C interface to the remedis library. Every call returns a status code; on
 * failure remedis_last_error() describes it. The message is thread-local and
 * stays valid until the next failing call on the same thread. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define REMEDIS_API __declspec(dllexport)
#else
#define REMEDIS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  REMEDIS_OK = 0,
  REMEDIS_INVALID_ARGUMENT = 1,
  REMEDIS_SHAPE_MISMATCH = 2,
  REMEDIS_NUMERIC_OVERFLOW = 3,
  REMEDIS_IO = 4,
  REMEDIS_COMPUTE = 5,
  REMEDIS_INCOMPLETE = 6,
  REMEDIS_INTERNAL = 7
} remedis_status;

REMEDIS_API const char* remedis_last_error(void);
REMEDIS_API const char* remedis_status_name(remedis_status status);
REMEDIS_API const char* remedis_version(void);

/* ---- run configuration (opaque) ---- */

typedef struct remedis_config remedis_config;

REMEDIS_API remedis_status remedis_config_default(remedis_config** out);
REMEDIS_API remedis_status remedis_config_parse(const char* json_text, remedis_config** out);
REMEDIS_API remedis_status remedis_config_load(const char* path, remedis_config** out);
REMEDIS_API void remedis_config_free(remedis_config* config);

REMEDIS_API remedis_status remedis_config_set_seed(remedis_config* config, uint64_t seed);
REMEDIS_API remedis_status remedis_config_set_workers(remedis_config* config, size_t workers);
REMEDIS_API remedis_status remedis_config_set_output_dir(remedis_config* config, const char* dir);
/* Comma separated strategy names; keeps the intersection. */
REMEDIS_API remedis_status remedis_config_filter_strategies(remedis_config* config, const char* filter);
/* Owned by the handle; valid until the handle is changed or freed. */
REMEDIS_API const char* remedis_config_output_dir(const remedis_config* config);
REMEDIS_API const char* remedis_config_json(const remedis_config* config);

/* ---- commands; out_dir NULL uses the config's output_dir ---- */

REMEDIS_API remedis_status remedis_gen_data(const remedis_config* config, const char* out_dir);
REMEDIS_API remedis_status remedis_pretrain(const remedis_config* config, const char* out_dir);
REMEDIS_API remedis_status remedis_finetune(const remedis_config* config, const char* out_dir);
/* REMEDIS_COMPUTE when any unit failed; all artifacts are still written. */
REMEDIS_API remedis_status remedis_protocol(const remedis_config* config, const char* out_dir);
/* out_dir NULL writes into <results_dir>/report. REMEDIS_INCOMPLETE when
 * cells are missing; the report is still written. */
REMEDIS_API remedis_status remedis_report(const char* results_dir, const char* out_dir);

/* ---- numerics ---- */

/* z is [2n x dim] row-major, rows 2k and 2k+1 are a positive pair. grad may
 * be NULL, otherwise it receives d loss / d z with the same layout. */
REMEDIS_API remedis_status remedis_nt_xent(const double* z, size_t rows, size_t dim, double temperature,
                                           double* loss, double* grad);

REMEDIS_API remedis_status remedis_welch(const double* a, size_t na, const double* b, size_t nb, double* t,
                                         double* dof, double* p);

/* Curve points must be sorted by fraction. *found is 0 when the target is
 * above every point. */
REMEDIS_API remedis_status remedis_matching_fraction(const double* fractions, const double* means, size_t n,
                                                     double target, double* fraction, int* found);

typedef struct {
  double total_hours;
  double total_dollars;
  double samples_saved;
  double hours_saved;
  double dollars_saved;
} remedis_cost_report;

/* cost_per_image 0 derives it from wage and seconds. */
REMEDIS_API remedis_status remedis_cost_savings(double images, double seconds_per_image, double hourly_wage,
                                                double cost_per_image, double fraction_needed,
                                                remedis_cost_report* out);

REMEDIS_API remedis_status remedis_select_checkpoint(const size_t* steps, const double* losses, size_t n,
                                                     size_t max_steps, size_t* selected_step);

#ifdef __cplusplus
}
#endif

#endif  /* REMEDIS_REMEDIS_H_ */
