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

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "starfm/bounds.hpp"
#include "starfm/losses.hpp"
#include "starfm/metrics.hpp"
#include "starfm/models.hpp"
#include "starfm/shiftgen.hpp"

namespace starfm {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view s);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  std::size_t num_bins = 10;
  // Score the Fisher term on unlabelled target inputs with predicted labels.
  bool fisher_on_target = false;
  PatchSpec patches;

  void validate() const;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<double> theta, std::span<const double> grad) = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(std::span<double> theta, std::span<const double> grad) override;

 private:
  double lr_;
};

// Bias-corrected first/second moment estimates, β = (0.9, 0.999), ε = 1e-8.
class Adam final : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(std::span<double> theta, std::span<const double> grad) override;

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg);

struct EvalPoint {
  std::size_t epoch = 0;
  double target_metric = 0.0;  // accuracy (vision) or mean target DSC (medical)
  double target_ece = 0.0;
};

struct VisionMetrics {
  double acc_src = 0.0;
  double acc_tgt = 0.0;
  CalibrationReport cal_src;
  CalibrationReport cal_tgt;
  double brier_src = 0.0;
  double brier_tgt = 0.0;
};

struct SiteMetrics {
  std::size_t site = 0;
  SegReport seg;
  double voxel_accuracy = 0.0;
  EceBoundReport ece_bound;
};

struct RunReport {
  std::string task;  // "vision" or "medical"
  ModelKind model = ModelKind::linear_softmax;
  TrainConfig config;
  std::vector<double> loss_curve;
  std::vector<EvalPoint> eval_curve;
  std::optional<VisionMetrics> vision;
  std::vector<SiteMetrics> sites;
  // Reliability data for the target split (vision) or pooled target sites (medical).
  CalibrationReport calibration;
  DomainReport domain;
  std::optional<RiskBoundReport> risk_bound;
  ParamVector final_params;
};

// Model initialisation seed derived from the run seed.
std::uint64_t init_seed(std::uint64_t run_seed);

VisionMetrics evaluate_vision(const Model& model, const ShiftedDataset& data, std::size_t num_bins);

// Minibatch optimisation of the vision objective on the source split.
RunReport train_vision(Model& model, const ShiftedDataset& data, const TrainConfig& cfg);

// Site 0 holds the training volumes; the last volume of every site is its
// evaluation volume (site 0 trains on the others when it has more than one).
RunReport train_medical(Model& model, const SyntheticVolumeSet& data, const TrainConfig& cfg);

enum class SweepMode { one_axis, full_grid };

struct SweepGrid {
  std::vector<double> lambda1_values{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> lambda2_values{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  SweepMode mode = SweepMode::one_axis;

  void validate() const;
  // one_axis: λ1 values with λ2 = 0, then λ2 values with λ1 = 0, duplicates removed.
  std::vector<std::pair<double, double>> points() const;
};

struct SweepPoint {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::optional<RunReport> report;
  std::string error;
};

using RunFn = std::function<RunReport(const TrainConfig&)>;

// Runs every grid point with an isolated config; failures are recorded per
// point. Results are returned in grid order regardless of `jobs`.
std::vector<SweepPoint> sweep(const RunFn& run, const SweepGrid& grid, const TrainConfig& base, std::size_t jobs = 1);

}  // namespace starfm
