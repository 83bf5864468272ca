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

// Quick property and brute-force checks behind `starfm check`.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>

#include "starfm/experiment.hpp"

namespace starfm {

namespace {

struct Checker {
  std::ostream& out;
  bool all_ok = true;

  void run(const std::string& name, const std::function<std::string()>& f) {
    std::string detail;
    try {
      detail = f();
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const bool ok = detail.empty();
    all_ok = all_ok && ok;
    out << (ok ? "PASS " : "FAIL ") << name;
    if (!ok) out << ": " << detail;
    out << "\n";
  }
};

SampleBatch random_batch(std::size_t n, std::size_t d, std::size_t k, Rng& rng) {
  SampleBatch b;
  b.dim = d;
  for (std::size_t i = 0; i < n * d; ++i) b.features.push_back(rng.normal());
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(rng.below(k)));
  return b;
}

MaskVolume random_mask(Dims d, double p, Rng& rng) {
  MaskVolume m(d);
  for (auto& v : m.data) v = rng.uniform() < p ? 1 : 0;
  return m;
}

std::string gradient_check(ModelKind kind, bool medical, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 7);
  const ModelDims dims = kind == ModelKind::voxel_linear ? ModelDims{3, 0, 2} : ModelDims{3, 4, medical ? 2u : 3u};
  const Model m = Model::create(kind, dims, seed, 0.5);
  const ObjectiveConfig oc{0.3, 0.4, nullptr};
  LossFn f;
  SampleBatch vb;
  SegmentationBatch sb;
  if (medical) {
    sb = make_flat_batch(random_batch(12, 3, 2, rng));
    f = [&](std::span<const double> th, std::vector<double>* g) {
      LossValue v = loss_medical(m, th, sb, oc);
      if (g) *g = v.grad;
      return v.total;
    };
  } else {
    vb = random_batch(kind == ModelKind::two_tower ? 3 : 6, 3, 3, rng);
    if (kind == ModelKind::two_tower)
      for (std::size_t i = 0; i < vb.size(); ++i) vb.labels[i] = static_cast<int>(i);
    f = [&](std::span<const double> th, std::vector<double>* g) {
      LossValue v = loss_vision(m, th, vb, oc);
      if (g) *g = v.grad;
      return v.total;
    };
  }
  const auto r = finite_diff_check(f, m.params().values, 20, rng);
  if (r.max_relative_error < 1e-4) return "";
  return "max relative error " + format_double(r.max_relative_error);
}

// Direct evaluation of the class-level penalty.
double cmp_class_direct(const std::vector<double>& p, std::size_t y) {
  double s = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (a == y || !(p[a] > p[y])) continue;
    double rest = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (j != a) rest += p[j];
    s += p[a] / std::max(rest, std::numeric_limits<double>::min());
  }
  return s;
}

// All-pairs HD95 over boundary voxels.
std::optional<double> hd95_direct(const MaskVolume& a, const MaskVolume& b) {
  auto border = [](const MaskVolume& m) {
    std::vector<std::array<long, 3>> pts;
    const Dims d = m.dims;
    for (std::size_t z = 0; z < d.nz; ++z)
      for (std::size_t y = 0; y < d.ny; ++y)
        for (std::size_t x = 0; x < d.nx; ++x) {
          if (!m.at(x, y, z)) continue;
          bool edge = x == 0 || y == 0 || z == 0 || x + 1 == d.nx || y + 1 == d.ny || z + 1 == d.nz;
          if (!edge)
            edge = !m.at(x - 1, y, z) || !m.at(x + 1, y, z) || !m.at(x, y - 1, z) || !m.at(x, y + 1, z) ||
                   !m.at(x, y, z - 1) || !m.at(x, y, z + 1);
          if (edge) pts.push_back({long(x), long(y), long(z)});
        }
    return pts;
  };
  const auto pa = border(a), pb = border(b);
  if (pa.empty() || pb.empty()) return std::nullopt;
  std::vector<double> d;
  auto directed = [&](const auto& from, const auto& to) {
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dx = double(p[0] - q[0]) * a.spacing.sx, dy = double(p[1] - q[1]) * a.spacing.sy,
                     dz = double(p[2] - q[2]) * a.spacing.sz;
        best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
      }
      d.push_back(best);
    }
  };
  directed(pa, pb);
  directed(pb, pa);
  std::sort(d.begin(), d.end());
  const double pos = 0.95 * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

// One-parameter Gaussian mean model with known σ: score (x - μ)/σ².
class GaussianMeanScores final : public ScoreSource {
 public:
  GaussianMeanScores(std::vector<double> x, double sigma) : x_(std::move(x)), s2_(sigma * sigma) {}
  std::size_t size() const override { return x_.size(); }
  std::size_t param_count() const override { return 1; }
  void score(std::span<const double> th, std::size_t i, std::span<double> g) const override {
    g[0] = (x_[i] - th[0]) / s2_;
  }
  void score_hvp(std::span<const double> th, std::size_t i, std::span<const double> v, std::span<double> g,
                 std::span<double> hv) const override {
    g[0] = (x_[i] - th[0]) / s2_;
    hv[0] = -v[0] / s2_;
  }

 private:
  std::vector<double> x_;
  double s2_;
};

}  // namespace

bool cmd_check(std::ostream& out, std::uint64_t seed) {
  Checker c{out};

  for (ModelKind k : {ModelKind::linear_softmax, ModelKind::mlp1, ModelKind::two_tower, ModelKind::voxel_linear}) {
    if (k != ModelKind::voxel_linear)
      c.run("gradient vision " + std::string(to_string(k)), [&] { return gradient_check(k, false, seed); });
    if (k != ModelKind::two_tower)
      c.run("gradient medical " + std::string(to_string(k)), [&] { return gradient_check(k, true, seed); });
  }

  c.run("reduction vision lambda=0", [&]() -> std::string {
    Rng rng = Rng::stream(seed, 11);
    const Model m = Model::create(ModelKind::mlp1, {4, 5, 3}, seed);
    const SampleBatch b = random_batch(10, 4, 3, rng);
    const double a = loss_vision(m, m.params().values, b, {}).total;
    const double base = base_loss_vision(m, m.params().values, b);
    return std::fabs(a - base) <= 1e-12 ? "" : "composite " + format_double(a) + " vs base " + format_double(base);
  });

  c.run("cmp_class brute force", [&]() -> std::string {
    Rng rng = Rng::stream(seed, 12);
    for (int t = 0; t < 200; ++t) {
      const std::size_t k = 2 + rng.below(4);
      std::vector<double> z(k);
      for (auto& v : z) v = 3.0 * rng.normal();
      const ProbVector p = stable_softmax(z);
      const std::size_t y = rng.below(k);
      const double a = cmp_class(p, y), b = cmp_class_direct(p.values, y);
      if (std::fabs(a - b) > 1e-12 * std::max(1.0, std::fabs(b))) return "mismatch at trial " + std::to_string(t);
    }
    return "";
  });

  c.run("dsc and hd95 brute force", [&]() -> std::string {
    Rng rng = Rng::stream(seed, 13);
    for (int t = 0; t < 50; ++t) {
      const Dims d{3 + rng.below(4), 3 + rng.below(4), 3 + rng.below(4)};
      const MaskVolume a = random_mask(d, 0.3, rng), b = random_mask(d, 0.3, rng);
      std::size_t inter = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] && b[i];
        na += a[i] != 0;
        nb += b[i] != 0;
      }
      const double want = na + nb == 0 ? 1.0 : 2.0 * double(inter) / double(na + nb);
      if (dsc(a, b) != want) return "dsc mismatch at trial " + std::to_string(t);
      const auto h = try_hd95(a, b), hb = hd95_direct(a, b);
      if (h.has_value() != hb.has_value() || (h && std::fabs(*h - *hb) > 1e-9 * std::max(1.0, *hb)))
        return "hd95 mismatch at trial " + std::to_string(t);
    }
    return "";
  });

  c.run("ece brute force", [&]() -> std::string {
    Rng rng = Rng::stream(seed, 14);
    std::vector<double> conf(300);
    std::vector<std::uint8_t> ok(300);
    for (std::size_t i = 0; i < conf.size(); ++i) {
      conf[i] = rng.uniform();
      ok[i] = rng.uniform() < conf[i];
    }
    const double got = ece(conf, ok, 10).ece;
    double want = 0.0;
    for (int b = 0; b < 10; ++b) {
      double n = 0, s = 0, a = 0;
      for (std::size_t i = 0; i < conf.size(); ++i) {
        const bool in = conf[i] >= b / 10.0 && (conf[i] < (b + 1) / 10.0 || (b == 9 && conf[i] <= 1.0));
        if (!in) continue;
        n += 1;
        s += conf[i];
        a += ok[i];
      }
      if (n > 0) want += n / conf.size() * std::fabs(a / n - s / n);
    }
    return std::fabs(got - want) <= 1e-12 ? "" : "ece " + format_double(got) + " vs " + format_double(want);
  });

  c.run("metric edge cases", [&]() -> std::string {
    const MaskVolume empty(Dims{4, 4, 4});
    if (dsc(empty, empty) != 1.0) return "empty dice is not 1";
    if (try_hd95(empty, empty).has_value()) return "empty hd95 is defined";
    if (ece_bin_index(1.0, 10) != 9) return "confidence 1.0 not in the last bin";
    return "";
  });

  c.run("fisher gaussian mean", [&]() -> std::string {
    Rng rng = Rng::stream(seed, 15);
    std::vector<double> x(100000);
    for (auto& v : x) v = 2.0 * rng.normal();
    const GaussianMeanScores s(x, 2.0);
    ParamVector p{{0.0}, {{"head", 0, 1}}};
    const double f = fisher_global(s, p).scalar;
    return std::fabs(f - 0.25) <= 0.05 * 0.25 ? "" : "estimate " + format_double(f);
  });

  c.run("determinism", [&]() -> std::string {
    ExperimentConfig cfg = parse_config(Json{{"seed", seed},
                                             {"shift", {{"magnitude", 1.0}, {"n_src", 200}, {"n_tgt", 200}, {"dim", 3}}},
                                             {"train", {{"epochs", 2}, {"learning_rate", 0.01}, {"lambda1", 0.2}, {"lambda2", 0.2}}}});
    const Dataset d = generate_dataset(cfg);
    const std::string a = canonical_json(report_json(run_training(cfg, d, cfg.train), cfg));
    const std::string b = canonical_json(report_json(run_training(cfg, d, cfg.train), cfg));
    return a == b ? "" : "reports differ";
  });

  return c.all_ok;
}

}  // namespace starfm
