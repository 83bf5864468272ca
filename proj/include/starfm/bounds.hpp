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

#include <optional>
#include <string>

#include "starfm/metrics.hpp"
#include "starfm/models.hpp"
#include "starfm/penalties.hpp"
#include "starfm/shiftgen.hpp"

namespace starfm {

enum class RiskLoss { cross_entropy, zero_one };

struct SigmaShift {
  std::optional<SymMatrix> matrix;
  double trace = 0.0;
};

struct RiskBoundReport {
  double risk_src = 0.0;
  double risk_tgt = 0.0;
  double se_src = 0.0;
  double se_tgt = 0.0;
  double fisher_trace = 0.0;
  double shift_cov_trace = 0.0;
  // trace(I·Σ_shift) with full matrices, or trace(I)·trace(Σ_shift), an
  // upper bound for PSD factors, when the model is too large.
  double fisher_shift_product = 0.0;
  std::string product_mode;
  double bound_value = 0.0;     // with O(n^-1/2) constant c = 1
  double bound_value_c0 = 0.0;  // c = 0
  double slack = 0.0;           // bound_value - risk_tgt
  double kl_src_tgt = 0.0;      // KL(P_tgt || P_src) of the feature marginals
  // Change-of-measure quantities from the true importance weights.
  double iw_risk = 0.0;
  double iw_risk_se = 0.0;
  double mean_weight = 0.0;
  double mean_weight_se = 0.0;
  double cov_term = 0.0;
  double cauchy_schwarz_bound = 0.0;
  std::size_t n = 0;
};

struct EceBoundReport {
  double ece_measured = 0.0;
  double cmp_3d = 0.0;
  std::size_t n = 0;
  double brier = 0.0;
  double bound_value = 0.0;
  bool holds = false;
};

// Covariance of the target scores about their mean.
SigmaShift sigma_shift(const Model& model, const ParamVector& params, const SampleBatch& target);

RiskBoundReport eval_risk_bound(const Model& model, const ParamVector& params, const ShiftedDataset& data,
                                RiskLoss loss = RiskLoss::cross_entropy);

EceBoundReport eval_ece_bound(const ProbVolume& probs, const MaskVolume& truth, std::size_t num_bins = 10);

// Per-sample loss of the model under the chosen loss.
std::vector<double> per_sample_loss(const Model& model, const ParamVector& params, const SampleBatch& batch,
                                    RiskLoss loss);

}  // namespace starfm
