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

#include "starfm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "starfm/core_math.hpp"
#include "starfm/error.hpp"

namespace starfm {

namespace {

void validate(const EmbeddingBatch& b) {
  require(b.n >= 2, "contrastive loss needs at least 2 pairs");
  require(b.dim >= 1 && b.image.size() == b.n * b.dim && b.text.size() == b.n * b.dim,
          "embedding batch shape mismatch");
  require(std::isfinite(b.temperature) && b.temperature > 0, "temperature must be positive");
}

// Row-normalized copy plus norms.
std::vector<double> normalize_rows(const std::vector<double>& m, std::size_t n, std::size_t d,
                                   std::vector<double>& norms) {
  std::vector<double> u(m.size());
  norms.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += m[i * d + j] * m[i * d + j];
    require(s > 0.0, "contrastive loss: zero-norm embedding");
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) u[i * d + j] = m[i * d + j] / norms[i];
  }
  return u;
}

// Map gradient w.r.t. a unit row back to the raw row.
void unnormalize_grad(const std::vector<double>& u, const std::vector<double>& norms, std::size_t n,
                      std::size_t d, std::vector<double>& g) {
  for (std::size_t i = 0; i < n; ++i) {
    double ug = 0.0;
    for (std::size_t j = 0; j < d; ++j) ug += u[i * d + j] * g[i * d + j];
    for (std::size_t j = 0; j < d; ++j) g[i * d + j] = (g[i * d + j] - u[i * d + j] * ug) / norms[i];
  }
}

double clamp_prob(double p) { return std::clamp(p, kBceClampEps, 1.0 - kBceClampEps); }

}  // namespace

ContrastiveResult contrastive_loss_grad(const EmbeddingBatch& b) {
  validate(b);
  const std::size_t n = b.n, d = b.dim;
  std::vector<double> ni, nt;
  const auto ui = normalize_rows(b.image, n, d, ni);
  const auto ut = normalize_rows(b.text, n, d, nt);
  // s[i][j] = sim(image_i, text_j) / τ
  std::vector<double> s(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < d; ++k) c += ui[i * d + k] * ut[j * d + k];
      s[i * n + j] = std::clamp(c, -1.0, 1.0) / b.temperature;
    }
  // ds accumulates ∂L/∂s.
  std::vector<double> ds(n * n, 0.0), row(n), p(n);
  double l_img = 0.0, l_txt = 0.0;
  const double w = 0.5 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = s[i * n + j];
    l_img += log_sum_exp(row) - row[i];
    p = row;
    softmax_inplace<double>(p);
    for (std::size_t j = 0; j < n; ++j) ds[i * n + j] += w * (p[j] - (i == j ? 1.0 : 0.0));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = s[j * n + i];
    l_txt += log_sum_exp(row) - row[i];
    p = row;
    softmax_inplace<double>(p);
    for (std::size_t j = 0; j < n; ++j) ds[j * n + i] += w * (p[j] - (i == j ? 1.0 : 0.0));
  }
  ContrastiveResult r;
  r.value = 0.5 * (l_img + l_txt) / static_cast<double>(n);
  r.d_image.assign(n * d, 0.0);
  r.d_text.assign(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double g = ds[i * n + j] / b.temperature;
      if (g == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) {
        r.d_image[i * d + k] += g * ut[j * d + k];
        r.d_text[j * d + k] += g * ui[i * d + k];
      }
    }
  unnormalize_grad(ui, ni, n, d, r.d_image);
  unnormalize_grad(ut, nt, n, d, r.d_text);
  return r;
}

double contrastive_loss(const EmbeddingBatch& b) { return contrastive_loss_grad(b).value; }

double dice_loss(const MaskVolume& pred, const MaskVolume& truth) {
  require_same_shape(pred, truth, "dice_loss");
  std::size_t a = 0, t = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = truth[i] != 0;
    a += p;
    t += g;
    both += p && g;
  }
  if (a + t == 0) return 0.0;
  return 1.0 - 2.0 * static_cast<double>(both) / static_cast<double>(a + t);
}

double soft_dice_loss(const ProbVolume& pred, const MaskVolume& truth) {
  require_same_shape(pred, truth, "soft_dice_loss");
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double g = truth[i] ? 1.0 : 0.0;
    inter += pred[i] * g;
    sp += pred[i];
    st += g;
  }
  if (sp + st == 0.0) return 0.0;
  return 1.0 - 2.0 * inter / (sp + st);
}

double bce_loss(const ProbVolume& pred, const MaskVolume& truth) {
  require_same_shape(pred, truth, "bce_loss");
  require(pred.size() > 0, "bce_loss: empty volume");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = clamp_prob(pred[i]);
    s += truth[i] ? std::log(p) : std::log1p(-p);
  }
  return -s / static_cast<double>(pred.size());
}

double sam_loss(const ProbVolume& pred, const MaskVolume& truth) {
  return soft_dice_loss(pred, truth) + bce_loss(pred, truth);
}

SegmentationBatch make_volume_batch(const VolumeGrid& volume, const MaskVolume& truth,
                                    const PatchSpec& patches) {
  SegmentationBatch b;
  b.samples = segmenter_features(volume, &truth);
  b.patches = tile_patches(volume.dims, patches);
  return b;
}

SegmentationBatch make_flat_batch(const SampleBatch& samples) {
  require(samples.size() > 0, "empty batch");
  SegmentationBatch b;
  b.samples = samples;
  b.patches.emplace_back(samples.size());
  std::iota(b.patches.back().begin(), b.patches.back().end(), 0);
  return b;
}

namespace {

// Mean cross-entropy over the batch; dlogits receives ∂L/∂z when non-null.
double cross_entropy(const Model& model, std::span<const double> theta, const SampleBatch& batch,
                     std::vector<double>* grad) {
  const std::size_t K = model.classes(), n = batch.size();
  require(n > 0, "empty batch");
  std::vector<double> z(K);
  double loss = 0.0;
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = batch.labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < K, "label out of range");
    model.logits<double>(theta, batch.row(i), z);
    loss += w * (log_sum_exp(z) - z[y]);
    if (grad) {
      softmax_inplace<double>(z);
      z[y] -= 1.0;
      for (double& v : z) v *= w;
      model.logits_vjp<double>(theta, batch.row(i), z, *grad);
    }
  }
  return loss;
}

double contrastive_for_model(const Model& model, std::span<const double> theta, const SampleBatch& batch,
                             std::vector<double>* grad) {
  const std::size_t n = batch.size(), E = model.dims().hidden;
  EmbeddingBatch eb;
  eb.n = n;
  eb.dim = E;
  eb.temperature = model.temperature();
  eb.image.resize(n * E);
  eb.text.resize(n * E);
  for (std::size_t i = 0; i < n; ++i) {
    model.embed_image(theta, batch.row(i), std::span<double>(eb.image.data() + i * E, E));
    model.embed_text(theta, static_cast<std::size_t>(batch.labels[i]), std::span<double>(eb.text.data() + i * E, E));
  }
  ContrastiveResult r = contrastive_loss_grad(eb);
  if (grad) {
    for (std::size_t i = 0; i < n; ++i) {
      model.embed_image_vjp(batch.row(i), std::span<const double>(r.d_image.data() + i * E, E), *grad);
      model.embed_text_vjp(static_cast<std::size_t>(batch.labels[i]),
                           std::span<const double>(r.d_text.data() + i * E, E), *grad);
    }
  }
  return r.value;
}

}  // namespace

double base_loss_vision(const Model& model, std::span<const double> theta, const SampleBatch& batch) {
  if (model.kind() == ModelKind::two_tower) return contrastive_for_model(model, theta, batch, nullptr);
  return cross_entropy(model, theta, batch, nullptr);
}

LossValue loss_vision(const Model& model, std::span<const double> theta, const SampleBatch& batch,
                      const ObjectiveConfig& config) {
  LossValue out;
  out.grad.assign(model.param_count(), 0.0);
  out.base = model.kind() == ModelKind::two_tower ? contrastive_for_model(model, theta, batch, &out.grad)
                                                  : cross_entropy(model, theta, batch, &out.grad);
  PenaltyConfig pc{config.lambda1, config.lambda2, CmpForm::class_level, config.fisher_batch};
  PenaltyValue pen = penalty_gradients(model, theta, batch, pc);
  out.fip = pen.fip;
  out.cmp = pen.cmp;
  out.total = out.base + pen.total;
  for (std::size_t j = 0; j < out.grad.size(); ++j) out.grad[j] += pen.grad[j];
  return out;
}

LossValue loss_medical(const Model& model, std::span<const double> theta, const SegmentationBatch& batch,
                       const ObjectiveConfig& config) {
  require(model.classes() == 2, "segmentation objective needs a binary model");
  const SampleBatch& s = batch.samples;
  const std::size_t n = s.size();
  require(n > 0, "empty segmentation batch");
  LossValue out;
  out.grad.assign(model.param_count(), 0.0);

  std::vector<double> p1(n);
  std::vector<double> z(2);
  for (std::size_t i = 0; i < n; ++i) {
    model.logits<double>(theta, s.row(i), z);
    softmax_inplace<double>(z);
    p1[i] = z[1];
  }
  // Soft Dice.
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = s.labels[i] ? 1.0 : 0.0;
    inter += p1[i] * g;
    sp += p1[i];
    st += g;
  }
  const double denom = sp + st;
  double dice = 0.0;
  std::vector<double> dL_dp(n, 0.0);
  if (denom > 0.0) {
    dice = 1.0 - 2.0 * inter / denom;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = s.labels[i] ? 1.0 : 0.0;
      dL_dp[i] += -2.0 * (g * denom - inter) / (denom * denom);
    }
  }
  // BCE, zero gradient where the clamp is active.
  double bce = 0.0;
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = clamp_prob(p1[i]);
    const bool y = s.labels[i] != 0;
    bce -= w * (y ? std::log(p) : std::log1p(-p));
    if (p == p1[i]) dL_dp[i] += -w * (y ? 1.0 / p : -1.0 / (1.0 - p));
  }
  out.base = dice + bce;
  // dp1/dz = p1(1-p1)·[-1, 1]
  std::vector<double> dz(2);
  for (std::size_t i = 0; i < n; ++i) {
    if (dL_dp[i] == 0.0) continue;
    const double c = dL_dp[i] * p1[i] * (1.0 - p1[i]);
    dz[0] = -c;
    dz[1] = c;
    model.logits_vjp<double>(theta, s.row(i), dz, out.grad);
  }
  PenaltyConfig pc{config.lambda1, config.lambda2, CmpForm::voxel_level, config.fisher_batch};
  PenaltyValue pen = penalty_gradients(model, theta, s, pc, config.fisher_batch ? nullptr : &batch.patches);
  out.fip = pen.fip;
  out.cmp = pen.cmp;
  out.total = out.base + pen.total;
  for (std::size_t j = 0; j < out.grad.size(); ++j) out.grad[j] += pen.grad[j];
  return out;
}

}  // namespace starfm
