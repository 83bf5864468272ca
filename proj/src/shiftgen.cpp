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

#include "starfm/shiftgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "starfm/core_math.hpp"
#include "starfm/error.hpp"

namespace starfm {

namespace {

// Stream ids keep every generated quantity on its own PRNG stream.
enum Stream : std::uint64_t {
  kRule = 1,
  kSourceX = 2,
  kTargetX = 3,
  kSourceU = 4,
  kTargetU = 5,
  kSites = 16,
  kVolumes = 1024,
};

IsoGaussian source_marginal(const ShiftSpec& spec) { return {std::vector<double>(spec.dim, 0.0), 1.0}; }

}  // namespace

std::string_view to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::mean_shift: return "mean_shift";
    case ShiftKind::covariance_scale: return "covariance_scale";
    case ShiftKind::site_intensity: return "site_intensity";
  }
  return "?";
}

ShiftKind shift_kind_from_string(std::string_view s) {
  if (s == "mean_shift") return ShiftKind::mean_shift;
  if (s == "covariance_scale") return ShiftKind::covariance_scale;
  if (s == "site_intensity") return ShiftKind::site_intensity;
  fail(ErrorCode::configuration, "unknown shift kind '" + std::string(s) + "'");
}

double IsoGaussian::log_density(std::span<const double> x) const {
  const double d = static_cast<double>(mean.size());
  double q = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double r = (x[i] - mean[i]) / scale;
    q += r * r;
  }
  return -0.5 * q - d * std::log(scale) - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

double kl_gaussian(const IsoGaussian& p, const IsoGaussian& q) {
  const double d = static_cast<double>(p.mean.size());
  const double r = p.scale / q.scale;
  double m = 0.0;
  for (std::size_t i = 0; i < p.mean.size(); ++i) {
    const double diff = (p.mean[i] - q.mean[i]) / q.scale;
    m += diff * diff;
  }
  return 0.5 * (d * r * r + m - d - 2.0 * d * std::log(r));
}

IsoGaussian target_marginal(const ShiftSpec& spec, const ConditionalRule& rule) {
  IsoGaussian g = source_marginal(spec);
  const double m = spec.magnitude;
  switch (spec.kind) {
    case ShiftKind::mean_shift: {
      std::vector<double> u(spec.dim, 0.0);
      double n2 = 0.0;
      for (std::size_t j = 0; j < spec.dim; ++j) {
        u[j] = rule.prototypes[spec.dim + j] - rule.prototypes[j];
        n2 += u[j] * u[j];
      }
      if (n2 < 1e-24) {
        std::fill(u.begin(), u.end(), 0.0);
        u[0] = 1.0;
        n2 = 1.0;
      }
      const double n = std::sqrt(n2);
      for (std::size_t j = 0; j < spec.dim; ++j) g.mean[j] = m * u[j] / n;
      break;
    }
    case ShiftKind::covariance_scale:
      g.scale = 1.0 + m;
      break;
    case ShiftKind::site_intensity:
      // Gain plus offset on every axis, the feature-space analogue of a scanner change.
      g.scale = 1.0 + 0.25 * m;
      for (double& v : g.mean) v = 0.5 * m;
      break;
  }
  return g;
}

int ConditionalRule::decide(std::span<const double> x) const {
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    double v = 0.0;
    for (std::size_t j = 0; j < dim; ++j) v += prototypes[k * dim + j] * x[j];
    if (k == 0 || v > best_score) {
      best = k;
      best_score = v;
    }
  }
  return static_cast<int>(best);
}

std::vector<double> ConditionalRule::probabilities(std::span<const double> x) const {
  std::vector<double> p(classes, noise / static_cast<double>(classes - 1));
  p[static_cast<std::size_t>(decide(x))] = 1.0 - noise;
  return p;
}

int ConditionalRule::label(std::span<const double> x, double u) const {
  const int k = decide(x);
  if (u >= noise) return k;
  // u/noise is uniform in [0,1): pick one of the other classes.
  const auto j = std::min(classes - 2, static_cast<std::size_t>(u / noise * static_cast<double>(classes - 1)));
  return static_cast<int>(j) < k ? static_cast<int>(j) : static_cast<int>(j) + 1;
}

double ShiftedDataset::importance_weight(std::span<const double> x) const {
  return std::exp(target_density.log_density(x) - source_density.log_density(x));
}

double ShiftedDataset::kl_target_source() const { return kl_gaussian(target_density, source_density); }

ConditionalRule make_rule(const ShiftSpec& spec) {
  ConditionalRule rule;
  rule.classes = spec.classes;
  rule.dim = spec.dim;
  rule.noise = spec.label_noise;
  rule.prototypes.resize(spec.classes * spec.dim);
  Rng rr = Rng::stream(spec.seed, kRule);
  for (std::size_t k = 0; k < spec.classes; ++k) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      double v = rr.normal();
      rule.prototypes[k * spec.dim + j] = v;
      n2 += v * v;
    }
    const double n = std::sqrt(n2);
    for (std::size_t j = 0; j < spec.dim; ++j) rule.prototypes[k * spec.dim + j] /= n;
  }
  return rule;
}

ShiftedDataset gen_classification(const ShiftSpec& spec) {
  require(spec.n_src >= 1 && spec.n_tgt >= 1, "shift spec: sample counts must be >= 1");
  require(spec.classes >= 2 && spec.dim >= 1, "shift spec: need >= 2 classes and dim >= 1");
  require(spec.magnitude >= 0.0 && std::isfinite(spec.magnitude), "shift spec: magnitude must be >= 0");
  require(spec.label_noise >= 0.0 && spec.label_noise < 1.0 - 1.0 / static_cast<double>(spec.classes),
          "shift spec: label noise must lie in [0, 1 - 1/K)");

  ShiftedDataset ds;
  ds.spec = spec;
  ds.rule = make_rule(spec);
  const ConditionalRule& rule = ds.rule;
  ds.source_density = source_marginal(spec);
  ds.target_density = target_marginal(spec, rule);

  auto draw = [&](const IsoGaussian& g, std::size_t n, std::uint64_t xs, std::uint64_t us, SampleBatch& out,
                  std::vector<double>& uniforms) {
    Rng rx = Rng::stream(spec.seed, xs);
    Rng ru = Rng::stream(spec.seed, us);
    out.dim = spec.dim;
    out.features.resize(n * spec.dim);
    out.labels.resize(n);
    uniforms.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < spec.dim; ++j) out.features[i * spec.dim + j] = g.mean[j] + g.scale * rx.normal();
      uniforms[i] = ru.uniform();
      out.labels[i] = rule.label(out.row(i), uniforms[i]);
    }
  };
  draw(ds.source_density, spec.n_src, kSourceX, kSourceU, ds.source, ds.source_uniforms);
  draw(ds.target_density, spec.n_tgt, kTargetX, kTargetU, ds.target, ds.target_uniforms);

  ds.importance_weights.resize(spec.n_src);
  for (std::size_t i = 0; i < spec.n_src; ++i) ds.importance_weights[i] = ds.importance_weight(ds.source.row(i));
  return ds;
}

void rasterize_ellipsoid(MaskVolume& mask, const Ellipsoid& e) {
  const Dims d = mask.dims;
  auto range = [](double c, double a, std::size_t n) {
    const long lo = std::max(0L, static_cast<long>(std::floor(c - a)));
    const long hi = std::min(static_cast<long>(n) - 1, static_cast<long>(std::ceil(c + a)));
    return std::pair<long, long>{lo, hi};
  };
  const auto [x0, x1] = range(e.cx, e.ax, d.nx);
  const auto [y0, y1] = range(e.cy, e.ay, d.ny);
  const auto [z0, z1] = range(e.cz, e.az, d.nz);
  for (long z = z0; z <= z1; ++z)
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        const double u = (x - e.cx) / e.ax, v = (y - e.cy) / e.ay, w = (z - e.cz) / e.az;
        if (u * u + v * v + w * w <= 1.0) mask.at(x, y, z) = 1;
      }
}

namespace {

constexpr double kBackgroundSigma = 0.35;
constexpr double kLesionContrast = 1.0;

VolumeSample make_volume(std::size_t edge, Rng& rng) {
  const Dims dims{edge, edge, edge};
  VolumeSample s{VolumeGrid(dims), MaskVolume(dims)};
  // Smooth background: white noise blurred by a 3-tap box filter along each axis.
  std::vector<double> a(dims.count()), b(dims.count());
  for (double& v : a) v = rng.normal();
  auto blur = [&](std::size_t stride, std::size_t n_axis, auto coord) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::size_t c = coord(i);
      double sum = a[i];
      int cnt = 1;
      if (c > 0) { sum += a[i - stride]; ++cnt; }
      if (c + 1 < n_axis) { sum += a[i + stride]; ++cnt; }
      b[i] = sum / cnt;
    }
    a.swap(b);
  };
  blur(1, edge, [edge](std::size_t i) { return i % edge; });
  blur(edge, edge, [edge](std::size_t i) { return (i / edge) % edge; });
  blur(edge * edge, edge, [edge](std::size_t i) { return i / (edge * edge); });
  // Rescale to zero mean and the background sigma.
  double m = 0.0, ss = 0.0;
  for (double v : a) m += v;
  m /= static_cast<double>(a.size());
  for (double v : a) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(a.size()));
  for (double& v : a) v = (v - m) / sd * kBackgroundSigma;

  const std::size_t lesions = 1 + rng.below(3);
  const double rmin = 4.0, rmax = std::max(4.0, static_cast<double>(edge) / 4.0);
  for (std::size_t l = 0; l < lesions; ++l) {
    Ellipsoid e{};
    e.ax = rng.uniform(rmin, rmax);
    e.ay = rng.uniform(rmin, rmax);
    e.az = rng.uniform(rmin, rmax);
    e.cx = rng.uniform(e.ax, static_cast<double>(edge - 1) - e.ax);
    e.cy = rng.uniform(e.ay, static_cast<double>(edge - 1) - e.ay);
    e.cz = rng.uniform(e.az, static_cast<double>(edge - 1) - e.az);
    rasterize_ellipsoid(s.mask, e);
  }
  for (std::size_t i = 0; i < a.size(); ++i)
    s.image[i] = static_cast<float>(a[i] + (s.mask[i] ? kLesionContrast : 0.0));
  return s;
}

}  // namespace

SyntheticVolumeSet gen_volumes(std::size_t n_sites, std::size_t per_site, std::size_t edge, std::uint64_t seed,
                               const std::vector<SiteParams>* site_params) {
  require(edge >= 16, "gen_volumes: edge must be >= 16");
  require(n_sites >= 1 && per_site >= 1, "gen_volumes: need at least one site and volume");
  SyntheticVolumeSet set;
  if (site_params) {
    require(site_params->size() == n_sites, "gen_volumes: site parameter count mismatch");
    set.site_params = *site_params;
  } else {
    Rng sr = Rng::stream(seed, kSites);
    set.site_params.resize(n_sites);
    for (std::size_t s = 1; s < n_sites; ++s) {
      set.site_params[s].gain = sr.uniform(0.7, 1.3);
      set.site_params[s].offset = sr.uniform(-0.4, 0.4);
      set.site_params[s].noise = sr.uniform(0.05, 0.25);
    }
  }
  set.sites.resize(n_sites);
  for (std::size_t s = 0; s < n_sites; ++s) {
    const SiteParams& sp = set.site_params[s];
    for (std::size_t v = 0; v < per_site; ++v) {
      // Anatomy and site noise live on separate streams so that the masks do
      // not depend on the site transform.
      Rng anatomy = Rng::stream(seed, kVolumes + 2 * (s * per_site + v));
      Rng noise = Rng::stream(seed, kVolumes + 2 * (s * per_site + v) + 1);
      VolumeSample vs = make_volume(edge, anatomy);
      for (float& x : vs.image.data) {
        const double n = sp.noise > 0.0 ? sp.noise * noise.normal() : 0.0;
        x = static_cast<float>(sp.gain * x + sp.offset + n);
      }
      set.sites[s].push_back(std::move(vs));
    }
  }
  return set;
}

}  // namespace starfm
