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

#include "remedis/remedis.h"

#include <new>
#include <span>
#include <string>
#include <vector>

#include "remedis/commands.hpp"
#include "remedis/config.hpp"
#include "remedis/contrastive.hpp"
#include "remedis/error.hpp"
#include "remedis/pipeline.hpp"
#include "remedis/stats.hpp"

struct remedis_config {
  remedis::config::RunConfig config;
  std::string output_dir;
  std::string json;
};

namespace {

thread_local std::string last_error;

remedis_status status_of(remedis::ErrorCode code) {
  using remedis::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument: return REMEDIS_INVALID_ARGUMENT;
    case ErrorCode::kShapeMismatch: return REMEDIS_SHAPE_MISMATCH;
    case ErrorCode::kNumericOverflow: return REMEDIS_NUMERIC_OVERFLOW;
    case ErrorCode::kIo: return REMEDIS_IO;
    case ErrorCode::kCompute: return REMEDIS_COMPUTE;
    case ErrorCode::kIncomplete: return REMEDIS_INCOMPLETE;
  }
  return REMEDIS_INTERNAL;
}

template <typename F>
remedis_status guarded(F&& body) {
  try {
    return body();
  } catch (const remedis::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return REMEDIS_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return REMEDIS_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return REMEDIS_INTERNAL;
  }
}

remedis_status invalid(const char* message) {
  last_error = message;
  return REMEDIS_INVALID_ARGUMENT;
}

void refresh(remedis_config* h) {
  h->output_dir = h->config.output_dir;
  h->json = remedis::config::to_json(h->config);
}

remedis_status wrap(remedis::config::RunConfig cfg, remedis_config** out) {
  auto* h = new remedis_config{std::move(cfg), {}, {}};
  refresh(h);
  *out = h;
  return REMEDIS_OK;
}

std::filesystem::path out_path(const remedis_config* config, const char* out_dir) {
  return out_dir ? std::filesystem::path(out_dir) : std::filesystem::path(config->config.output_dir);
}

}  // namespace

extern "C" {

const char* remedis_last_error(void) { return last_error.c_str(); }

const char* remedis_status_name(remedis_status status) {
  switch (status) {
    case REMEDIS_OK: return "ok";
    case REMEDIS_INVALID_ARGUMENT: return "invalid_argument";
    case REMEDIS_SHAPE_MISMATCH: return "shape_mismatch";
    case REMEDIS_NUMERIC_OVERFLOW: return "numeric_overflow";
    case REMEDIS_IO: return "io";
    case REMEDIS_COMPUTE: return "compute";
    case REMEDIS_INCOMPLETE: return "incomplete";
    case REMEDIS_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* remedis_version(void) { return "0.1.0"; }

remedis_status remedis_config_default(remedis_config** out) {
  if (!out) return invalid("config: null output handle");
  return guarded([&] { return wrap(remedis::config::RunConfig{}, out); });
}

remedis_status remedis_config_parse(const char* json_text, remedis_config** out) {
  if (!json_text || !out) return invalid("config: null argument");
  return guarded([&] { return wrap(remedis::config::parse_run_config(json_text), out); });
}

remedis_status remedis_config_load(const char* path, remedis_config** out) {
  if (!path || !out) return invalid("config: null argument");
  return guarded([&] { return wrap(remedis::config::load_run_config(path), out); });
}

void remedis_config_free(remedis_config* config) { delete config; }

remedis_status remedis_config_set_seed(remedis_config* config, uint64_t seed) {
  if (!config) return invalid("config: null handle");
  config->config.protocol.seed = seed;
  return guarded([&] {
    refresh(config);
    return REMEDIS_OK;
  });
}

remedis_status remedis_config_set_workers(remedis_config* config, size_t workers) {
  if (!config) return invalid("config: null handle");
  config->config.workers = workers;
  return guarded([&] {
    refresh(config);
    return REMEDIS_OK;
  });
}

remedis_status remedis_config_set_output_dir(remedis_config* config, const char* dir) {
  if (!config || !dir || !*dir) return invalid("config: output dir must be non-empty");
  config->config.output_dir = dir;
  return guarded([&] {
    refresh(config);
    return REMEDIS_OK;
  });
}

remedis_status remedis_config_filter_strategies(remedis_config* config, const char* filter) {
  if (!config || !filter) return invalid("config: null argument");
  return guarded([&] {
    remedis::config::RunConfig copy = config->config;
    remedis::commands::filter_strategies(copy, filter);
    config->config = std::move(copy);
    refresh(config);
    return REMEDIS_OK;
  });
}

const char* remedis_config_output_dir(const remedis_config* config) {
  return config ? config->output_dir.c_str() : nullptr;
}

const char* remedis_config_json(const remedis_config* config) { return config ? config->json.c_str() : nullptr; }

remedis_status remedis_gen_data(const remedis_config* config, const char* out_dir) {
  if (!config) return invalid("gen-data: null config");
  return guarded([&] {
    remedis::commands::gen_data(config->config, out_path(config, out_dir));
    return REMEDIS_OK;
  });
}

remedis_status remedis_pretrain(const remedis_config* config, const char* out_dir) {
  if (!config) return invalid("pretrain: null config");
  return guarded([&] {
    remedis::commands::pretrain(config->config, out_path(config, out_dir));
    return REMEDIS_OK;
  });
}

remedis_status remedis_finetune(const remedis_config* config, const char* out_dir) {
  if (!config) return invalid("finetune: null config");
  return guarded([&] {
    remedis::commands::finetune(config->config, out_path(config, out_dir));
    return REMEDIS_OK;
  });
}

remedis_status remedis_protocol(const remedis_config* config, const char* out_dir) {
  if (!config) return invalid("protocol: null config");
  return guarded([&] {
    const auto outcome = remedis::commands::protocol(config->config, out_path(config, out_dir));
    if (outcome.failed_units > 0) {
      last_error = std::to_string(outcome.failed_units) + " unit(s) failed; see manifest.json";
      return REMEDIS_COMPUTE;
    }
    return REMEDIS_OK;
  });
}

remedis_status remedis_report(const char* results_dir, const char* out_dir) {
  if (!results_dir) return invalid("report: null results dir");
  return guarded([&] {
    const std::filesystem::path results(results_dir);
    const auto outcome =
        remedis::commands::report(results, out_dir ? std::filesystem::path(out_dir) : results / "report");
    if (!outcome.complete) {
      last_error = std::to_string(outcome.missing.size()) + " cell(s) missing, first: " + outcome.missing.front();
      return REMEDIS_INCOMPLETE;
    }
    return REMEDIS_OK;
  });
}

remedis_status remedis_nt_xent(const double* z, size_t rows, size_t dim, double temperature, double* loss,
                               double* grad) {
  if (!z || !loss) return invalid("nt_xent: null argument");
  if (rows == 0 || rows % 2 != 0 || dim == 0) return invalid("nt_xent: rows must be even and positive, dim > 0");
  return guarded([&] {
    using namespace remedis;
    Tensor values({rows, dim}, std::vector<double>(z, z + rows * dim));
    const auto pairing = contrastive::interleaved_pairing(rows / 2);
    if (!grad) {
      *loss = contrastive::nt_xent_loss(values, pairing, temperature).loss;
      return REMEDIS_OK;
    }
    ad::Tape tape;
    const ad::Var leaf = tape.leaf(std::move(values), true);
    const auto terms = contrastive::nt_xent_loss(leaf, pairing, temperature);
    *loss = terms.loss.value().item();
    const ad::Gradients grads = tape.backward(terms.loss);
    const Tensor& g = grads[leaf];
    std::copy(g.raw(), g.raw() + g.size(), grad);
    return REMEDIS_OK;
  });
}

remedis_status remedis_welch(const double* a, size_t na, const double* b, size_t nb, double* t, double* dof,
                             double* p) {
  if (!a || !b || !t || !dof || !p) return invalid("welch: null argument");
  return guarded([&] {
    const auto r = remedis::stats::welch_ttest(std::span(a, na), std::span(b, nb));
    *t = r.t;
    *dof = r.dof;
    *p = r.p;
    return REMEDIS_OK;
  });
}

remedis_status remedis_matching_fraction(const double* fractions, const double* means, size_t n, double target,
                                         double* fraction, int* found) {
  if (!fractions || !means || !fraction || !found) return invalid("matching_fraction: null argument");
  return guarded([&] {
    remedis::stats::EfficiencyCurve curve;
    for (size_t i = 0; i < n; ++i) curve.push_back({fractions[i], means[i], means[i], means[i]});
    const auto f = remedis::stats::matching_fraction(curve, target);
    *found = f ? 1 : 0;
    *fraction = f.value_or(0.0);
    return REMEDIS_OK;
  });
}

remedis_status remedis_cost_savings(double images, double seconds_per_image, double hourly_wage,
                                    double cost_per_image, double fraction_needed, remedis_cost_report* out) {
  if (!out) return invalid("cost_savings: null output");
  return guarded([&] {
    const remedis::stats::CostSpec spec{"task", images, seconds_per_image, hourly_wage, cost_per_image};
    const auto r = remedis::stats::cost_savings(spec, fraction_needed);
    *out = {r.total_hours, r.total_dollars, r.samples_saved, r.hours_saved, r.dollars_saved};
    return REMEDIS_OK;
  });
}

remedis_status remedis_select_checkpoint(const size_t* steps, const double* losses, size_t n, size_t max_steps,
                                         size_t* selected_step) {
  if ((n > 0 && (!steps || !losses)) || !selected_step) return invalid("select_checkpoint: null argument");
  return guarded([&] {
    std::vector<remedis::pipeline::CheckpointRecord> records;
    for (size_t i = 0; i < n; ++i) records.push_back({steps[i], losses[i], std::nullopt});
    *selected_step = remedis::pipeline::select_checkpoint(records, max_steps).step;
    return REMEDIS_OK;
  });
}

}  // extern "C"
