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

#include "starfm/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "starfm/error.hpp"

namespace starfm {

namespace {

constexpr double kNormEps = 1e-12;

struct Layout {
  // linear_softmax: W(K×d) b(K)
  // mlp1:           W1(H×d) b1(H) W2(K×H) b2(K)
  // two_tower:      Wi(E×d) bi(E) Wt(E×K)
  // voxel_linear:   w(3) b(1)
  std::size_t total = 0;
  std::vector<Segment> segments;
};

Layout layout_for(ModelKind kind, const ModelDims& d) {
  Layout l;
  const std::size_t K = d.classes, D = d.input, H = d.hidden;
  switch (kind) {
    case ModelKind::linear_softmax:
      l.segments = {{"head", 0, K * D + K}};
      break;
    case ModelKind::mlp1:
      l.segments = {{"hidden", 0, H * D + H}, {"head", H * D + H, K * H + K}};
      break;
    case ModelKind::two_tower:
      l.segments = {{"img_encoder", 0, H * D + H}, {"txt_encoder", H * D + H, H * K}};
      break;
    case ModelKind::voxel_linear:
      l.segments = {{"head", 0, kStencilFeatures + 1}};
      break;
  }
  for (const auto& s : l.segments) l.total += s.length;
  return l;
}

void validate_dims(ModelKind kind, const ModelDims& d) {
  require(d.classes >= 2, "model needs at least 2 classes");
  switch (kind) {
    case ModelKind::linear_softmax:
      require(d.input >= 1, "linear_softmax: input dim must be >= 1");
      break;
    case ModelKind::mlp1:
    case ModelKind::two_tower:
      require(d.input >= 1 && d.hidden >= 1, "model: input and hidden dims must be >= 1");
      break;
    case ModelKind::voxel_linear:
      require(d.input == kStencilFeatures && d.classes == 2,
              "voxel_linear: input must be 3 stencil features and 2 classes");
      break;
  }
}

template <class T>
T dot(std::span<const T> a, std::span<const double> b) {
  T s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

const Segment* ParamVector::find(std::string_view name) const {
  for (const auto& s : segments)
    if (s.name == name) return &s;
  return nullptr;
}

void ParamVector::validate() const {
  std::vector<Segment> sorted = segments;
  std::sort(sorted.begin(), sorted.end(),
            [](const Segment& a, const Segment& b) { return a.offset < b.offset; });
  std::size_t cursor = 0;
  for (const auto& s : sorted) {
    require(s.offset == cursor && s.length > 0,
            "parameter segments must be disjoint and cover the vector");
    cursor += s.length;
  }
  require(cursor == values.size(), "parameter segments must cover the vector");
  for (double v : values) require(std::isfinite(v), "non-finite parameter");
}

ParamVector ParamVector::zeros_like(const ParamVector& p) {
  return ParamVector{std::vector<double>(p.size(), 0.0), p.segments};
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::linear_softmax: return "linear_softmax";
    case ModelKind::mlp1: return "mlp1";
    case ModelKind::two_tower: return "two_tower";
    case ModelKind::voxel_linear: return "voxel_linear";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "linear_softmax") return ModelKind::linear_softmax;
  if (s == "mlp1") return ModelKind::mlp1;
  if (s == "two_tower") return ModelKind::two_tower;
  if (s == "voxel_linear") return ModelKind::voxel_linear;
  fail(ErrorCode::configuration, "unknown model kind '" + std::string(s) + "'");
}

SampleBatch SampleBatch::subset(std::span<const std::size_t> idx) const {
  SampleBatch out;
  out.dim = dim;
  out.features.reserve(idx.size() * dim);
  out.labels.reserve(idx.size());
  for (std::size_t i : idx) {
    auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

Model Model::create(ModelKind kind, ModelDims dims, std::uint64_t seed, double temperature) {
  validate_dims(kind, dims);
  Layout l = layout_for(kind, dims);
  ParamVector p{std::vector<double>(l.total), l.segments};
  Rng rng(seed);
  auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) p.values[offset + i] = rng.uniform(-bound, bound);
  };
  const std::size_t K = dims.classes, D = dims.input, H = dims.hidden;
  switch (kind) {
    case ModelKind::linear_softmax:
      fill(0, K * D + K, D);
      break;
    case ModelKind::mlp1:
      fill(0, H * D + H, D);
      fill(H * D + H, K * H + K, H);
      break;
    case ModelKind::two_tower:
      fill(0, H * D + H, D);
      fill(H * D + H, H * K, K);
      break;
    case ModelKind::voxel_linear:
      fill(0, kStencilFeatures + 1, kStencilFeatures);
      break;
  }
  return from_params(kind, dims, std::move(p), temperature);
}

Model Model::from_params(ModelKind kind, ModelDims dims, ParamVector params, double temperature) {
  validate_dims(kind, dims);
  require(std::isfinite(temperature) && temperature > 0, "temperature must be positive");
  Layout l = layout_for(kind, dims);
  require(params.size() == l.total, "parameter count does not match model dims");
  require(params.segments == l.segments, "parameter segments do not match model layout");
  params.validate();
  Model m;
  m.kind_ = kind;
  m.dims_ = dims;
  m.temperature_ = temperature;
  m.params_ = std::move(params);
  return m;
}

template <class T>
void Model::logits(std::span<const T> theta, std::span<const double> x, std::span<T> z) const {
  using std::sqrt;
  using std::tanh;
  const std::size_t K = dims_.classes, D = dims_.input, H = dims_.hidden;
  require(x.size() == D, "input dimension mismatch");
  switch (kind_) {
    case ModelKind::linear_softmax: {
      for (std::size_t k = 0; k < K; ++k) z[k] = dot<T>(theta.subspan(k * D, D), x) + theta[K * D + k];
      break;
    }
    case ModelKind::mlp1: {
      std::vector<T> h(H);
      for (std::size_t j = 0; j < H; ++j) h[j] = tanh(dot<T>(theta.subspan(j * D, D), x) + theta[H * D + j]);
      const std::size_t o = H * D + H;
      for (std::size_t k = 0; k < K; ++k) {
        T s = theta[o + K * H + k];
        for (std::size_t j = 0; j < H; ++j) s += theta[o + k * H + j] * h[j];
        z[k] = s;
      }
      break;
    }
    case ModelKind::two_tower: {
      std::vector<T> e(H);
      T ne = kNormEps;
      for (std::size_t j = 0; j < H; ++j) {
        e[j] = dot<T>(theta.subspan(j * D, D), x) + theta[H * D + j];
        ne += e[j] * e[j];
      }
      ne = sqrt(ne);
      const std::size_t o = H * D + H;
      for (std::size_t k = 0; k < K; ++k) {
        T nt = kNormEps, s = 0.0;
        for (std::size_t j = 0; j < H; ++j) {
          const T& t = theta[o + j * K + k];
          nt += t * t;
          s += e[j] * t;
        }
        z[k] = s / (ne * sqrt(nt) * temperature_);
      }
      break;
    }
    case ModelKind::voxel_linear: {
      z[0] = 0.0;
      z[1] = dot<T>(theta.subspan(0, kStencilFeatures), x) + theta[kStencilFeatures];
      break;
    }
  }
}

template <class T>
void Model::logits_vjp(std::span<const T> theta, std::span<const double> x, std::span<const T> dz,
                       std::span<T> grad) const {
  using std::sqrt;
  using std::tanh;
  const std::size_t K = dims_.classes, D = dims_.input, H = dims_.hidden;
  require(x.size() == D, "input dimension mismatch");
  switch (kind_) {
    case ModelKind::linear_softmax: {
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < D; ++i) grad[k * D + i] += dz[k] * x[i];
        grad[K * D + k] += dz[k];
      }
      break;
    }
    case ModelKind::mlp1: {
      std::vector<T> h(H);
      for (std::size_t j = 0; j < H; ++j) h[j] = tanh(dot<T>(theta.subspan(j * D, D), x) + theta[H * D + j]);
      const std::size_t o = H * D + H;
      std::vector<T> dh(H, T(0.0));
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < H; ++j) {
          grad[o + k * H + j] += dz[k] * h[j];
          dh[j] += dz[k] * theta[o + k * H + j];
        }
        grad[o + K * H + k] += dz[k];
      }
      for (std::size_t j = 0; j < H; ++j) {
        T da = dh[j] * (T(1.0) - h[j] * h[j]);
        for (std::size_t i = 0; i < D; ++i) grad[j * D + i] += da * x[i];
        grad[H * D + j] += da;
      }
      break;
    }
    case ModelKind::two_tower: {
      // z_k = (e·t_k) / (|e| |t_k| τ) with |v| = sqrt(v·v + eps).
      std::vector<T> e(H), u(H);
      T ne2 = kNormEps;
      for (std::size_t j = 0; j < H; ++j) {
        e[j] = dot<T>(theta.subspan(j * D, D), x) + theta[H * D + j];
        ne2 += e[j] * e[j];
      }
      T ne = sqrt(ne2);
      for (std::size_t j = 0; j < H; ++j) u[j] = e[j] / ne;
      const std::size_t o = H * D + H;
      std::vector<T> du(H, T(0.0));
      std::vector<T> t(H), w(H), dw(H);
      for (std::size_t k = 0; k < K; ++k) {
        T nt2 = kNormEps;
        for (std::size_t j = 0; j < H; ++j) {
          t[j] = theta[o + j * K + k];
          nt2 += t[j] * t[j];
        }
        T nt = sqrt(nt2);
        T c = dz[k] / T(temperature_);
        T wdw = 0.0;
        for (std::size_t j = 0; j < H; ++j) {
          w[j] = t[j] / nt;
          du[j] += c * w[j];
          dw[j] = c * u[j];
          wdw += t[j] * dw[j];
        }
        // dt = dw/|t| - t (t·dw)/|t|³
        T nt3 = nt2 * nt;
        for (std::size_t j = 0; j < H; ++j) grad[o + j * K + k] += dw[j] / nt - t[j] * wdw / nt3;
      }
      T edu = 0.0;
      for (std::size_t j = 0; j < H; ++j) edu += e[j] * du[j];
      T ne3 = ne2 * ne;
      for (std::size_t j = 0; j < H; ++j) {
        T de = du[j] / ne - e[j] * edu / ne3;
        for (std::size_t i = 0; i < D; ++i) grad[j * D + i] += de * x[i];
        grad[H * D + j] += de;
      }
      break;
    }
    case ModelKind::voxel_linear: {
      for (std::size_t i = 0; i < kStencilFeatures; ++i) grad[i] += dz[1] * x[i];
      grad[kStencilFeatures] += dz[1];
      break;
    }
  }
}

template <class T>
void Model::score(std::span<const T> theta, std::span<const double> x, int y, std::span<T> g) const {
  const std::size_t K = dims_.classes;
  require(y >= 0 && static_cast<std::size_t>(y) < K, "label out of range");
  std::vector<T> z(K);
  logits<T>(theta, x, z);
  softmax_inplace<T>(z);
  for (std::size_t k = 0; k < K; ++k) z[k] = (static_cast<int>(k) == y ? T(1.0) : T(0.0)) - z[k];
  std::fill(g.begin(), g.end(), T(0.0));
  logits_vjp<T>(theta, x, z, g);
}

template void Model::logits<double>(std::span<const double>, std::span<const double>, std::span<double>) const;
template void Model::logits<Dual>(std::span<const Dual>, std::span<const double>, std::span<Dual>) const;
template void Model::logits_vjp<double>(std::span<const double>, std::span<const double>,
                                        std::span<const double>, std::span<double>) const;
template void Model::logits_vjp<Dual>(std::span<const Dual>, std::span<const double>,
                                      std::span<const Dual>, std::span<Dual>) const;
template void Model::score<double>(std::span<const double>, std::span<const double>, int,
                                   std::span<double>) const;
template void Model::score<Dual>(std::span<const Dual>, std::span<const double>, int,
                                 std::span<Dual>) const;

void Model::embed_image(std::span<const double> theta, std::span<const double> x,
                        std::span<double> e) const {
  require(kind_ == ModelKind::two_tower, "embed_image requires a two_tower model");
  const std::size_t D = dims_.input, H = dims_.hidden;
  require(x.size() == D, "input dimension mismatch");
  for (std::size_t j = 0; j < H; ++j) e[j] = dot<double>(theta.subspan(j * D, D), x) + theta[H * D + j];
}

void Model::embed_text(std::span<const double> theta, std::size_t k, std::span<double> t) const {
  require(kind_ == ModelKind::two_tower, "embed_text requires a two_tower model");
  const std::size_t D = dims_.input, H = dims_.hidden, K = dims_.classes;
  require(k < K, "class index out of range");
  const std::size_t o = H * D + H;
  for (std::size_t j = 0; j < H; ++j) t[j] = theta[o + j * K + k];
}

void Model::embed_image_vjp(std::span<const double> x, std::span<const double> de,
                            std::span<double> grad) const {
  const std::size_t D = dims_.input, H = dims_.hidden;
  for (std::size_t j = 0; j < H; ++j) {
    for (std::size_t i = 0; i < D; ++i) grad[j * D + i] += de[j] * x[i];
    grad[H * D + j] += de[j];
  }
}

void Model::embed_text_vjp(std::size_t k, std::span<const double> dt, std::span<double> grad) const {
  const std::size_t D = dims_.input, H = dims_.hidden, K = dims_.classes;
  const std::size_t o = H * D + H;
  for (std::size_t j = 0; j < H; ++j) grad[o + j * K + k] += dt[j];
}

std::vector<double> forward_classifier(const Model& model, std::span<const double> x) {
  require(x.size() == model.dims().input, "forward_classifier: input dimension mismatch");
  std::vector<double> z(model.classes());
  model.logits<double>(model.params().values, x, z);
  return stable_softmax(z, 1.0).values;
}

SampleBatch segmenter_features(const VolumeGrid& v, const MaskVolume* truth) {
  const Dims d = v.dims;
  require(d.nx >= 3 && d.ny >= 3 && d.nz >= 3, "volume smaller than the 3x3x3 feature stencil");
  if (truth) require_same_shape(v, *truth, "segmenter_features");
  SampleBatch b;
  b.dim = kStencilFeatures;
  b.features.resize(v.size() * kStencilFeatures);
  b.labels.resize(v.size(), 0);
  static constexpr int kOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const std::size_t i = v.index(x, y, z);
        const double c = v[i];
        double nsum = 0.0, all_sum = c, all_sq = c * c;
        int n = 0;
        for (const auto& o : kOffsets) {
          const long xx = static_cast<long>(x) + o[0], yy = static_cast<long>(y) + o[1],
                     zz = static_cast<long>(z) + o[2];
          if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<long>(d.nx) ||
              yy >= static_cast<long>(d.ny) || zz >= static_cast<long>(d.nz))
            continue;
          const double w = v.at(xx, yy, zz);
          nsum += w;
          all_sum += w;
          all_sq += w * w;
          ++n;
        }
        const double m = all_sum / (n + 1);
        double* f = &b.features[i * kStencilFeatures];
        f[0] = c;
        f[1] = nsum / n;
        f[2] = std::max(0.0, all_sq / (n + 1) - m * m);
        if (truth) b.labels[i] = (*truth)[i] ? 1 : 0;
      }
  return b;
}

ProbVolume forward_segmenter(const Model& model, const VolumeGrid& volume) {
  require(model.kind() == ModelKind::voxel_linear, "forward_segmenter requires a voxel_linear model");
  for (float f : volume.data) require(std::isfinite(f), "non-finite voxel intensity");
  SampleBatch b = segmenter_features(volume);
  ProbVolume out(volume.dims, volume.spacing);
  const auto& th = model.params().values;
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto x = b.row(i);
    double s = th[kStencilFeatures];
    for (std::size_t k = 0; k < kStencilFeatures; ++k) s += th[k] * x[k];
    out[i] = sigmoid(s);
  }
  return out;
}

const std::vector<double>& Tape::forward(const Model& model, std::span<const double> theta,
                                         const SampleBatch& batch) {
  require(theta.size() == model.param_count(), "Tape: parameter count mismatch");
  model_ = &model;
  batch_ = &batch;
  theta_.assign(theta.begin(), theta.end());
  const std::size_t K = model.classes();
  logits_.assign(batch.size() * K, 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i)
    model.logits<double>(theta_, batch.row(i), std::span<double>(logits_.data() + i * K, K));
  return logits_;
}

std::vector<double> Tape::backward(std::span<const double> dlogits) const {
  if (!model_) fail(ErrorCode::usage, "Tape::backward called without a recorded forward pass");
  const std::size_t K = model_->classes();
  require(dlogits.size() == logits_.size(), "Tape::backward: gradient shape mismatch");
  std::vector<double> grad(theta_.size(), 0.0);
  for (std::size_t i = 0; i < batch_->size(); ++i) {
    auto dz = dlogits.subspan(i * K, K);
    bool any = false;
    for (double v : dz) any = any || v != 0.0;
    if (any) model_->logits_vjp<double>(theta_, batch_->row(i), dz, grad);
  }
  return grad;
}

GradCheckReport finite_diff_check(const LossFn& loss, std::span<const double> theta,
                                  std::size_t trials, Rng& rng, double step) {
  require(trials >= 1, "finite_diff_check: trials must be >= 1");
  require(!theta.empty(), "finite_diff_check: empty parameter vector");
  constexpr double kFloor = 1e-3;
  std::vector<double> grad;
  std::vector<double> th(theta.begin(), theta.end());
  loss(th, &grad);
  require(grad.size() == th.size(), "finite_diff_check: gradient size mismatch");

  // Sample coordinates without replacement while possible.
  std::vector<std::size_t> order(th.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  GradCheckReport r;
  r.step = step;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t c = t < order.size() ? order[t] : rng.below(th.size());
    const double saved = th[c];
    th[c] = saved + step;
    const double fp = loss(th, nullptr);
    th[c] = saved - step;
    const double fm = loss(th, nullptr);
    th[c] = saved;
    const double fd = (fp - fm) / (2.0 * step);
    const double err = std::abs(grad[c] - fd) / std::max({std::abs(grad[c]), std::abs(fd), kFloor});
    if (!(err <= r.max_relative_error)) {
      r.max_relative_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      r.worst_coordinate = c;
    }
    ++r.checked_coordinates;
  }
  return r;
}

}  // namespace starfm
