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

#include "starfm/penalties.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "starfm/error.hpp"

namespace starfm {

namespace {

std::size_t argmax_high_tie(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k)
    if (p[k] >= p[best]) best = k;
  return best;
}

// Σ_{y'≠y, p_y' > p_y} p_y' / Σ_{j≠y'} p_j, optionally accumulating ∂/∂p.
double cmp_class_raw(std::span<const double> p, std::size_t y, std::span<double> dp) {
  double total = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (a == y || !(p[a] > p[y])) continue;
    double rest = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (j != a) rest += p[j];
    rest = std::max(rest, std::numeric_limits<double>::min());
    total += p[a] / rest;
    if (!dp.empty()) {
      dp[a] += 1.0 / rest;
      const double c = p[a] / (rest * rest);
      for (std::size_t j = 0; j < p.size(); ++j)
        if (j != a) dp[j] -= c;
    }
  }
  return total;
}

double clamp_confidence(double p) { return std::min(p, 1.0 - kCmpClampEps); }

void accumulate_outer(std::span<const double> g, double w, std::vector<double>& m) {
  const std::size_t n = g.size();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = r; c < n; ++c) {
      const double v = w * (g[r] * g[c]);
      m[r * n + c] += v;
      if (c != r) m[c * n + r] += v;
    }
  }
}

}  // namespace

double SymMatrix::trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) t += a[i * n + i];
  return t;
}

ModelScores::ModelScores(const Model& model, const SampleBatch& batch, bool predicted_labels)
    : model_(model), batch_(batch), predicted_labels_(predicted_labels) {
  require(batch.dim == model.dims().input, "batch feature dimension does not match model");
}

int ModelScores::label(std::span<const double> theta, std::size_t i) const {
  if (!predicted_labels_) return batch_.labels[i];
  std::vector<double> z(model_.classes());
  model_.logits<double>(theta, batch_.row(i), z);
  return static_cast<int>(argmax_high_tie(z));
}

void ModelScores::score(std::span<const double> theta, std::size_t i, std::span<double> g) const {
  model_.score<double>(theta, batch_.row(i), label(theta, i), g);
}

void ModelScores::score_hvp(std::span<const double> theta, std::size_t i, std::span<const double> v,
                            std::span<double> g, std::span<double> hv) const {
  const std::size_t P = theta.size();
  std::vector<Dual> th(P), out(P);
  for (std::size_t j = 0; j < P; ++j) th[j] = Dual(theta[j], v[j]);
  model_.score<Dual>(th, batch_.row(i), label(theta, i), out);
  for (std::size_t j = 0; j < P; ++j) {
    g[j] = out[j].v;
    hv[j] = out[j].d;
  }
}

PatchGroups tile_patches(const Dims& dims, const PatchSpec& spec) {
  require(spec.edge >= 1 && spec.stride >= 1, "patch edge and stride must be >= 1");
  require(dims.nx >= spec.edge && dims.ny >= spec.edge && dims.nz >= spec.edge,
          "volume smaller than one patch");
  auto starts = [&](std::size_t n) {
    std::vector<std::size_t> s;
    for (std::size_t o = 0; o + spec.edge <= n; o += spec.stride) s.push_back(o);
    return s;
  };
  const auto sx = starts(dims.nx), sy = starts(dims.ny), sz = starts(dims.nz);
  PatchGroups groups;
  for (std::size_t oz : sz)
    for (std::size_t oy : sy)
      for (std::size_t ox : sx) {
        std::vector<std::size_t> idx;
        idx.reserve(spec.edge * spec.edge * spec.edge);
        for (std::size_t z = oz; z < oz + spec.edge; ++z)
          for (std::size_t y = oy; y < oy + spec.edge; ++y)
            for (std::size_t x = ox; x < ox + spec.edge; ++x)
              idx.push_back(x + dims.nx * (y + dims.ny * z));
        groups.push_back(std::move(idx));
      }
  return groups;
}

double cmp_class(const ProbVector& probs, std::size_t true_label) {
  require(true_label < probs.size(), "cmp_class: label out of range");
  return cmp_class_raw(probs.values, true_label, {});
}

CmpValue cmp_vision(std::span<const ProbVector> probs, std::span<const int> labels) {
  require(!probs.empty(), "cmp_vision: empty batch");
  require(probs.size() == labels.size(), "cmp_vision: batch/label length mismatch");
  CmpValue out;
  out.per_item.reserve(probs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    require(labels[i] >= 0, "cmp_vision: negative label");
    out.per_item.push_back(cmp_class(probs[i], static_cast<std::size_t>(labels[i])));
    sum += out.per_item.back();
  }
  out.value = sum / static_cast<double>(probs.size());
  return out;
}

CmpValue cmp_voxel(const ProbVolume& probs, const MaskVolume& predicted_labels) {
  require_same_shape(probs, predicted_labels, "cmp_voxel");
  require(probs.size() > 0, "cmp_voxel: empty volume");
  CmpValue out;
  out.per_item.reserve(probs.size());
  double sum = 0.0;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    const double p = probs[v];
    require(p >= 0.0 && p <= 1.0, "cmp_voxel: probability outside [0,1]");
    const double conf = clamp_confidence(predicted_labels[v] ? p : 1.0 - p);
    const double term = conf / (1.0 - conf);
    out.per_item.push_back(term);
    sum += term;
  }
  out.value = sum / static_cast<double>(probs.size());
  return out;
}

CmpValue cmp_voxel(const ProbVolume& probs) { return cmp_voxel(probs, threshold(probs)); }

FisherEstimate fisher_global(const ScoreSource& src, const ParamVector& params,
                             std::span<const std::size_t> subset) {
  const std::size_t P = params.size();
  require(src.param_count() == P, "fisher: parameter count mismatch");
  const std::size_t n = subset.empty() ? src.size() : subset.size();
  require(n > 0, "fisher: empty batch");
  const bool with_matrix = P <= kFullFisherMaxParams;
  std::vector<double> diag(P, 0.0), g(P), mat(with_matrix ? P * P : 0, 0.0);
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t i = subset.empty() ? s : subset[s];
    src.score(params.values, i, g);
    for (std::size_t j = 0; j < P; ++j) {
      if (!std::isfinite(g[j])) fail(ErrorCode::numerical, "fisher: non-finite score");
      diag[j] += w * g[j] * g[j];
    }
    if (with_matrix) accumulate_outer(g, w, mat);
  }
  FisherEstimate f;
  for (const auto& seg : params.segments) {
    double s = 0.0;
    for (std::size_t j = seg.offset; j < seg.offset + seg.length; ++j) s += diag[j];
    f.per_segment[seg.name] = s;
  }
  for (double d : diag) f.scalar += d;
  if (with_matrix) f.matrix = SymMatrix{P, std::move(mat)};
  return f;
}

FisherEstimate fisher_global(const Model& model, const ParamVector& params, const SampleBatch& batch) {
  ModelScores src(model, batch);
  return fisher_global(src, params);
}

FisherEstimate fisher_vision(const Model& model, const ParamVector& params, const SampleBatch& batch) {
  const Segment* img = params.find("img_encoder");
  const Segment* txt = params.find("txt_encoder");
  if (!img || !txt)
    fail(ErrorCode::configuration, "fisher_vision requires 'img_encoder' and 'txt_encoder' segments");
  FisherEstimate f = fisher_global(model, params, batch);
  f.scalar = f.per_segment.at("img_encoder") + f.per_segment.at("txt_encoder");
  return f;
}

FisherEstimate fisher_patched(const ScoreSource& src, const ParamVector& params, const PatchGroups& patches) {
  require(!patches.empty(), "fisher: no patches");
  FisherEstimate acc;
  const double w = 1.0 / static_cast<double>(patches.size());
  for (const auto& patch : patches) {
    require(!patch.empty(), "fisher: empty patch");
    FisherEstimate f = fisher_global(src, params, patch);
    acc.scalar += w * f.scalar;
    for (const auto& [name, v] : f.per_segment) acc.per_segment[name] += w * v;
    if (f.matrix) {
      if (!acc.matrix) acc.matrix = SymMatrix{f.matrix->n, std::vector<double>(f.matrix->a.size(), 0.0)};
      for (std::size_t j = 0; j < f.matrix->a.size(); ++j) acc.matrix->a[j] += w * f.matrix->a[j];
    }
  }
  return acc;
}

FisherEstimate fisher_3d(const Model& model, const ParamVector& params, const VolumeGrid& volume,
                         const MaskVolume& truth, const PatchSpec& patches) {
  const PatchGroups groups = tile_patches(volume.dims, patches);
  const SampleBatch batch = segmenter_features(volume, &truth);
  ModelScores src(model, batch);
  return fisher_patched(src, params, groups);
}

PenaltyValue penalty_gradients(const Model& model, std::span<const double> theta,
                               const SampleBatch& batch, const PenaltyConfig& config,
                               const PatchGroups* fisher_groups) {
  require(config.lambda1 >= 0.0 && config.lambda2 >= 0.0, "penalty weights must be nonnegative");
  require(batch.size() > 0, "penalty: empty batch");
  const std::size_t P = model.param_count();
  require(theta.size() == P, "penalty: parameter count mismatch");
  PenaltyValue out;
  out.grad.assign(P, 0.0);

  if (config.lambda1 > 0.0) {
    const SampleBatch& fb = config.fisher_batch ? *config.fisher_batch : batch;
    ModelScores src(model, fb, config.fisher_batch != nullptr);
    PatchGroups whole;
    if (!fisher_groups) {
      whole.emplace_back(fb.size());
      std::iota(whole.back().begin(), whole.back().end(), 0);
      fisher_groups = &whole;
    }
    std::vector<double> g(P), hv(P);
    const double gw = 1.0 / static_cast<double>(fisher_groups->size());
    for (const auto& group : *fisher_groups) {
      require(!group.empty(), "penalty: empty Fisher group");
      const double w = gw / static_cast<double>(group.size());
      for (std::size_t i : group) {
        src.score(theta, i, g);
        src.score_hvp(theta, i, g, g, hv);
        double sq = 0.0;
        for (std::size_t j = 0; j < P; ++j) sq += g[j] * g[j];
        out.fip += w * sq;
        for (std::size_t j = 0; j < P; ++j) out.grad[j] += config.lambda1 * w * 2.0 * hv[j];
      }
    }
  }

  if (config.lambda2 > 0.0) {
    const std::size_t K = model.classes();
    const double w = 1.0 / static_cast<double>(batch.size());
    std::vector<double> p(K), dp(K), dz(K);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      model.logits<double>(theta, batch.row(i), p);
      softmax_inplace<double>(p);
      std::fill(dp.begin(), dp.end(), 0.0);
      double term = 0.0;
      if (config.cmp_form == CmpForm::class_level) {
        const int y = batch.labels[i];
        require(y >= 0 && static_cast<std::size_t>(y) < K, "penalty: label out of range");
        term = cmp_class_raw(p, static_cast<std::size_t>(y), dp);
      } else {
        const std::size_t k = argmax_high_tie(p);
        const double conf = p[k];
        if (conf > 1.0 - kCmpClampEps) {
          const double c = 1.0 - kCmpClampEps;
          term = c / (1.0 - c);
        } else {
          term = conf / (1.0 - conf);
          dp[k] = 1.0 / ((1.0 - conf) * (1.0 - conf));
        }
      }
      out.cmp += w * term;
      double pdp = 0.0;
      bool active = false;
      for (std::size_t k = 0; k < K; ++k) {
        pdp += p[k] * dp[k];
        active = active || dp[k] != 0.0;
      }
      if (!active) continue;
      for (std::size_t k = 0; k < K; ++k) dz[k] = config.lambda2 * w * p[k] * (dp[k] - pdp);
      model.logits_vjp<double>(theta, batch.row(i), dz, out.grad);
    }
  }
  out.total = config.lambda1 * out.fip + config.lambda2 * out.cmp;
  return out;
}

}  // namespace starfm
