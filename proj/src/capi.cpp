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

#include "starfm/starfm.h"

#include <filesystem>
#include <new>
#include <sstream>
#include <string>

#include "starfm/experiment.hpp"

struct starfm_model {
  starfm::Model model;
};

struct starfm_experiment {
  starfm::ExperimentConfig config;
};

namespace {

thread_local std::string g_last_error;

template <class F>
starfm_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return STARFM_OK;
  } catch (const starfm::Error& e) {
    g_last_error = e.what();
    return static_cast<starfm_status>(static_cast<int>(e.code()));
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return STARFM_E_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return STARFM_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return STARFM_E_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) starfm::fail(starfm::ErrorCode::usage, std::string(what) + " is NULL");
}

starfm::MaskVolume mask_from(const uint8_t* d, size_t nx, size_t ny, size_t nz, const double* spacing) {
  starfm::Spacing s;
  if (spacing) s = {spacing[0], spacing[1], spacing[2]};
  starfm::MaskVolume m({nx, ny, nz}, s);
  for (size_t i = 0; i < m.size(); ++i) m[i] = d[i] ? 1 : 0;
  return m;
}

starfm::Overrides to_overrides(const starfm_overrides* o) {
  starfm::Overrides r;
  if (!o) return r;
  if (o->has_seed) r.seed = o->seed;
  if (o->out_dir) r.out_dir = o->out_dir;
  if (o->format) r.format = o->format;
  return r;
}

// Flat probability/mask arrays as 1×1×n volumes.
starfm::ProbVolume flat_probs(const double* p, size_t n) {
  starfm::ProbVolume v({n, 1, 1});
  for (size_t i = 0; i < n; ++i) v[i] = p[i];
  return v;
}

}  // namespace

extern "C" {

const char* starfm_version(void) { return "0.1.0"; }

const char* starfm_last_error(void) { return g_last_error.c_str(); }

int starfm_exit_code(starfm_status s) {
  switch (s) {
    case STARFM_OK:
      return 0;
    case STARFM_E_CONFIGURATION:
    case STARFM_E_UNDEFINED_METRIC:
      return 3;
    case STARFM_E_INTERNAL:
      return 4;
    default:
      return static_cast<int>(s);
  }
}

starfm_status starfm_ece(const double* confidence, const uint8_t* correct, size_t n, size_t num_bins, double* out) {
  return guard([&] {
    need(confidence, "confidence");
    need(correct, "correct");
    need(out, "out");
    *out = starfm::ece({confidence, n}, {correct, n}, num_bins).ece;
  });
}

starfm_status starfm_dsc(const uint8_t* pred, const uint8_t* truth, size_t nx, size_t ny, size_t nz, double* out) {
  return guard([&] {
    need(pred, "pred");
    need(truth, "truth");
    need(out, "out");
    *out = starfm::dsc(mask_from(pred, nx, ny, nz, nullptr), mask_from(truth, nx, ny, nz, nullptr));
  });
}

starfm_status starfm_hd95(const uint8_t* pred, const uint8_t* truth, size_t nx, size_t ny, size_t nz,
                          const double* spacing, double* out) {
  return guard([&] {
    need(pred, "pred");
    need(truth, "truth");
    need(out, "out");
    *out = starfm::hd95(mask_from(pred, nx, ny, nz, spacing), mask_from(truth, nx, ny, nz, spacing));
  });
}

starfm_status starfm_cmp_class(const double* probs, size_t num_classes, size_t label, double* out) {
  return guard([&] {
    need(probs, "probs");
    need(out, "out");
    *out = starfm::cmp_class(starfm::ProbVector::from_values({probs, probs + num_classes}), label);
  });
}

starfm_status starfm_cmp_voxel(const double* probs, size_t n, double* out) {
  return guard([&] {
    need(probs, "probs");
    need(out, "out");
    *out = starfm::cmp_voxel(flat_probs(probs, n)).value;
  });
}

starfm_status starfm_bce(const double* probs, const uint8_t* truth, size_t n, double* out) {
  return guard([&] {
    need(probs, "probs");
    need(truth, "truth");
    need(out, "out");
    *out = starfm::bce_loss(flat_probs(probs, n), mask_from(truth, n, 1, 1, nullptr));
  });
}

starfm_status starfm_soft_dice(const double* probs, const uint8_t* truth, size_t n, double* out) {
  return guard([&] {
    need(probs, "probs");
    need(truth, "truth");
    need(out, "out");
    *out = starfm::soft_dice_loss(flat_probs(probs, n), mask_from(truth, n, 1, 1, nullptr));
  });
}

starfm_status starfm_model_create(const char* kind, size_t input, size_t hidden, size_t classes, uint64_t seed,
                                  double temperature, starfm_model** out) {
  return guard([&] {
    need(kind, "kind");
    need(out, "out");
    *out = nullptr;
    auto m = starfm::Model::create(starfm::model_kind_from_string(kind), {input, hidden, classes}, seed, temperature);
    *out = new starfm_model{std::move(m)};
  });
}

void starfm_model_free(starfm_model* model) { delete model; }

size_t starfm_model_param_count(const starfm_model* model) { return model ? model->model.param_count() : 0; }

size_t starfm_model_classes(const starfm_model* model) { return model ? model->model.classes() : 0; }

starfm_status starfm_model_get_params(const starfm_model* model, double* out, size_t n) {
  return guard([&] {
    need(model, "model");
    need(out, "out");
    const auto& v = model->model.params().values;
    if (n != v.size()) starfm::fail(starfm::ErrorCode::usage, "parameter buffer size mismatch");
    std::copy(v.begin(), v.end(), out);
  });
}

starfm_status starfm_model_set_params(starfm_model* model, const double* values, size_t n) {
  return guard([&] {
    need(model, "model");
    need(values, "values");
    auto& v = model->model.params().values;
    if (n != v.size()) starfm::fail(starfm::ErrorCode::usage, "parameter buffer size mismatch");
    std::copy(values, values + n, v.begin());
  });
}

starfm_status starfm_model_forward(const starfm_model* model, const double* x, size_t n, double* probs) {
  return guard([&] {
    need(model, "model");
    need(x, "x");
    need(probs, "probs");
    const auto& m = model->model;
    const size_t d = m.dims().input, k = m.classes();
    for (size_t i = 0; i < n; ++i) {
      const auto p = starfm::forward_classifier(m, {x + i * d, d});
      std::copy(p.begin(), p.end(), probs + i * k);
    }
  });
}

starfm_status starfm_model_save(const starfm_model* model, const char* path) {
  return guard([&] {
    need(model, "model");
    need(path, "path");
    starfm::save_checkpoint(path, model->model);
  });
}

starfm_status starfm_model_load(const char* path, starfm_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto m = starfm::load_checkpoint(path);
    *out = new starfm_model{std::move(m)};
  });
}

starfm_status starfm_experiment_create(const char* config_json, const starfm_overrides* overrides,
                                       starfm_experiment** out) {
  return guard([&] {
    need(config_json, "config_json");
    need(out, "out");
    *out = nullptr;
    starfm::Json doc;
    try {
      doc = starfm::Json::parse(config_json);
    } catch (const starfm::Json::parse_error& e) {
      starfm::fail(starfm::ErrorCode::invalid_input, std::string("config: malformed JSON: ") + e.what());
    }
    auto cfg = starfm::parse_config(starfm::apply_overrides(std::move(doc), to_overrides(overrides)));
    *out = new starfm_experiment{std::move(cfg)};
  });
}

starfm_status starfm_experiment_open(const char* config_path, const starfm_overrides* overrides,
                                     starfm_experiment** out) {
  return guard([&] {
    need(config_path, "config_path");
    need(out, "out");
    *out = nullptr;
    auto doc = starfm::read_json_file(config_path);
    auto cfg = starfm::parse_config(starfm::apply_overrides(std::move(doc), to_overrides(overrides)));
    *out = new starfm_experiment{std::move(cfg)};
  });
}

void starfm_experiment_free(starfm_experiment* exp) { delete exp; }

const char* starfm_experiment_out_dir(const starfm_experiment* exp) {
  return exp ? exp->config.out_dir.c_str() : "";
}

starfm_status starfm_experiment_gen(starfm_experiment* exp) {
  return guard([&] {
    need(exp, "experiment");
    starfm::cmd_gen(exp->config);
  });
}

starfm_status starfm_experiment_train(starfm_experiment* exp) {
  return guard([&] {
    need(exp, "experiment");
    starfm::cmd_train(exp->config);
  });
}

starfm_status starfm_experiment_sweep(starfm_experiment* exp, size_t jobs) {
  return guard([&] {
    need(exp, "experiment");
    starfm::cmd_sweep(exp->config, jobs == 0 ? 1 : jobs);
  });
}

starfm_status starfm_experiment_report(starfm_experiment* exp) {
  return guard([&] {
    need(exp, "experiment");
    starfm::cmd_report(exp->config);
  });
}

starfm_status starfm_check(uint64_t seed, starfm_line_fn on_line, void* user, int* all_passed) {
  return guard([&] {
    std::ostringstream os;
    const bool ok = starfm::cmd_check(os, seed);
    if (all_passed) *all_passed = ok ? 1 : 0;
    if (on_line) {
      std::istringstream in(os.str());
      for (std::string line; std::getline(in, line);) on_line(line.c_str(), user);
    }
  });
}

}  // extern "C"
