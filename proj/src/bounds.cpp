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

#include "starfm/bounds.hpp"

#include <cmath>

#include "starfm/error.hpp"

namespace starfm {

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample variance (divisor n - 1).
double var_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

double std_error(const std::vector<double>& v) {
  return std::sqrt(var_of(v, mean_of(v)) / static_cast<double>(v.size()));
}

}  // namespace

std::vector<double> per_sample_loss(const Model& model, const ParamVector& params, const SampleBatch& batch,
                                    RiskLoss loss) {
  std::vector<double> out(batch.size());
  std::vector<double> z(model.classes());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    model.logits<double>(params.values, batch.row(i), z);
    const int y = batch.labels[i];
    if (loss == RiskLoss::cross_entropy) {
      out[i] = log_sum_exp(z) - z[y];
    } else {
      std::size_t best = 0;
      for (std::size_t k = 1; k < z.size(); ++k)
        if (z[k] > z[best]) best = k;
      out[i] = static_cast<int>(best) == y ? 0.0 : 1.0;
    }
  }
  return out;
}

SigmaShift sigma_shift(const Model& model, const ParamVector& params, const SampleBatch& target) {
  require(target.size() > 0, "sigma_shift: empty target batch");
  ModelScores src(model, target);
  const std::size_t P = params.size(), n = target.size();
  const bool full = P <= kFullFisherMaxParams;
  std::vector<double> mean(P, 0.0), g(P);
  std::vector<std::vector<double>> scores;
  scores.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    src.score(params.values, i, g);
    for (std::size_t j = 0; j < P; ++j) mean[j] += g[j] / static_cast<double>(n);
    scores.push_back(g);
  }
  SigmaShift s;
  std::vector<double> m(full ? P * P : 0, 0.0);
  for (const auto& sc : scores) {
    for (std::size_t r = 0; r < P; ++r) {
      const double dr = sc[r] - mean[r];
      s.trace += dr * dr / static_cast<double>(n);
      if (!full) continue;
      for (std::size_t c = 0; c < P; ++c) m[r * P + c] += dr * (sc[c] - mean[c]) / static_cast<double>(n);
    }
  }
  if (full) s.matrix = SymMatrix{P, std::move(m)};
  return s;
}

RiskBoundReport eval_risk_bound(const Model& model, const ParamVector& params, const ShiftedDataset& data,
                                RiskLoss loss) {
  if (data.importance_weights.size() != data.source.size())
    fail(ErrorCode::configuration, "eval_risk_bound: dataset lacks importance weights");
  require(data.source.size() >= 2 && data.target.size() >= 2, "eval_risk_bound: need >= 2 samples per split");
  RiskBoundReport r;
  const auto ls = per_sample_loss(model, params, data.source, loss);
  const auto lt = per_sample_loss(model, params, data.target, loss);
  r.n = ls.size();
  r.risk_src = mean_of(ls);
  r.risk_tgt = mean_of(lt);
  r.se_src = std_error(ls);
  r.se_tgt = std_error(lt);

  const auto& w = data.importance_weights;
  std::vector<double> wl(ls.size());
  for (std::size_t i = 0; i < ls.size(); ++i) wl[i] = w[i] * ls[i];
  r.iw_risk = mean_of(wl);
  r.iw_risk_se = std_error(wl);
  r.mean_weight = mean_of(w);
  r.mean_weight_se = std_error(w);
  const double ml = r.risk_src;
  double cov = 0.0;
  for (std::size_t i = 0; i < ls.size(); ++i) cov += (w[i] - r.mean_weight) * (ls[i] - ml);
  r.cov_term = cov / static_cast<double>(ls.size() - 1);
  r.cauchy_schwarz_bound = std::sqrt(var_of(w, r.mean_weight) * var_of(ls, ml));

  const FisherEstimate fisher = fisher_global(model, params, data.source);
  const SigmaShift sig = sigma_shift(model, params, data.target);
  r.fisher_trace = fisher.scalar;
  r.shift_cov_trace = sig.trace;
  if (fisher.matrix && sig.matrix) {
    const std::size_t P = fisher.matrix->n;
    double t = 0.0;
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t j = 0; j < P; ++j) t += (*fisher.matrix)(i, j) * (*sig.matrix)(j, i);
    r.fisher_shift_product = std::max(0.0, t);
    r.product_mode = "trace_of_product";
  } else {
    r.fisher_shift_product = r.fisher_trace * r.shift_cov_trace;
    r.product_mode = "product_of_traces";
  }
  const double root = 0.5 * std::sqrt(r.fisher_shift_product);
  r.bound_value_c0 = r.risk_src + root;
  r.bound_value = r.bound_value_c0 + 1.0 / std::sqrt(static_cast<double>(r.n));
  r.slack = r.bound_value - r.risk_tgt;
  r.kl_src_tgt = data.kl_target_source();
  return r;
}

EceBoundReport eval_ece_bound(const ProbVolume& probs, const MaskVolume& truth, std::size_t num_bins) {
  require_same_shape(probs, truth, "eval_ece_bound");
  require(probs.size() > 0, "eval_ece_bound: empty volume");
  EceBoundReport r;
  r.ece_measured = ece_voxel(probs, truth, num_bins).ece;
  r.cmp_3d = cmp_voxel(probs).value;
  r.n = probs.size();
  r.brier = brier(probs, truth);
  r.bound_value = std::sqrt(r.cmp_3d / static_cast<double>(r.n)) + r.brier;
  r.holds = r.ece_measured <= r.bound_value;
  return r;
}

}  // namespace starfm
