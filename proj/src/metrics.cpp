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

#include "starfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "starfm/error.hpp"
#include "starfm/penalties.hpp"

namespace starfm {

std::size_t ece_bin_index(double c, std::size_t B) {
  require(B >= 1, "ece: bin count must be >= 1");
  require(c >= 0.0 && c <= 1.0, "ece: confidence outside [0,1]");
  auto lo = [B](std::size_t b) { return static_cast<double>(b) / static_cast<double>(B); };
  std::size_t b = std::min(static_cast<std::size_t>(c * static_cast<double>(B)), B - 1);
  // Settle rounding at the edges against the exact interval bounds.
  while (b > 0 && c < lo(b)) --b;
  while (b + 1 < B && c >= lo(b + 1)) ++b;
  return b;
}

CalibrationReport ece(std::span<const double> conf, std::span<const std::uint8_t> correct, std::size_t B) {
  require(!conf.empty(), "ece: empty input");
  require(conf.size() == correct.size(), "ece: length mismatch");
  require(B >= 1, "ece: bin count must be >= 1");
  CalibrationReport r;
  r.n = conf.size();
  r.num_bins = B;
  std::vector<double> sum_conf(B, 0.0), sum_acc(B, 0.0);
  std::vector<std::size_t> count(B, 0);
  double brier_sum = 0.0;
  for (std::size_t i = 0; i < conf.size(); ++i) {
    const std::size_t b = ece_bin_index(conf[i], B);
    const double hit = correct[i] ? 1.0 : 0.0;
    ++count[b];
    sum_conf[b] += conf[i];
    sum_acc[b] += hit;
    brier_sum += (hit - conf[i]) * (hit - conf[i]);
  }
  r.bins.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    r.bins[b].count = count[b];
    if (count[b] == 0) continue;
    r.bins[b].mean_confidence = sum_conf[b] / static_cast<double>(count[b]);
    r.bins[b].accuracy = sum_acc[b] / static_cast<double>(count[b]);
  }
  r.ece = ece_from_bins(r);
  r.brier = brier_sum / static_cast<double>(r.n);
  return r;
}

double ece_from_bins(const CalibrationReport& r) {
  double e = 0.0;
  for (const auto& b : r.bins) {
    if (b.count == 0) continue;
    e += static_cast<double>(b.count) / static_cast<double>(r.n) * std::abs(b.accuracy - b.mean_confidence);
  }
  return e;
}

namespace {

std::size_t argmax(const ProbVector& p) {
  return static_cast<std::size_t>(std::max_element(p.values.begin(), p.values.end()) - p.values.begin());
}

}  // namespace

double accuracy(std::span<const ProbVector> probs, std::span<const int> labels) {
  require(!probs.empty() && probs.size() == labels.size(), "accuracy: bad input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) hits += static_cast<int>(argmax(probs[i])) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

CalibrationReport ece_classifier(std::span<const ProbVector> probs, std::span<const int> labels, std::size_t B) {
  require(probs.size() == labels.size(), "ece: length mismatch");
  std::vector<double> conf(probs.size());
  std::vector<std::uint8_t> ok(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const std::size_t k = argmax(probs[i]);
    conf[i] = probs[i][k];
    ok[i] = static_cast<int>(k) == labels[i];
  }
  return ece(conf, ok, B);
}

CalibrationReport ece_voxel(const ProbVolume& probs, const MaskVolume& truth, std::size_t B, VoxelConfidence mode) {
  require_same_shape(probs, truth, "ece_voxel");
  std::vector<double> conf(probs.size());
  std::vector<std::uint8_t> ok(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    const bool y = truth[i] != 0;
    if (mode == VoxelConfidence::argmax) {
      const bool pred = p >= 0.5;
      conf[i] = pred ? p : 1.0 - p;
      ok[i] = pred == y;
    } else {
      conf[i] = p;
      ok[i] = y;
    }
  }
  return ece(conf, ok, B);
}

double brier(std::span<const ProbVector> probs, std::span<const int> labels) {
  require(!probs.empty() && probs.size() == labels.size(), "brier: bad input");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < probs[i].size(), "brier: label out of range");
    const double d = 1.0 - probs[i][static_cast<std::size_t>(labels[i])];
    s += d * d;
  }
  return s / static_cast<double>(probs.size());
}

double brier(std::span<const double> probs, std::span<const std::uint8_t> outcomes) {
  require(!probs.empty() && probs.size() == outcomes.size(), "brier: bad input");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double d = (outcomes[i] ? 1.0 : 0.0) - probs[i];
    s += d * d;
  }
  return s / static_cast<double>(probs.size());
}

double brier(const ProbVolume& probs, const MaskVolume& truth) {
  require_same_shape(probs, truth, "brier");
  return brier(std::span<const double>(probs.data), std::span<const std::uint8_t>(truth.data));
}

double dsc(const MaskVolume& pred, const MaskVolume& truth) {
  require_same_shape(pred, truth, "dsc");
  std::size_t a = 0, t = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = truth[i] != 0;
    a += p;
    t += g;
    both += p && g;
  }
  if (a + t == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + t);
}

std::vector<std::size_t> boundary_voxels(const MaskVolume& m) {
  const Dims d = m.dims;
  std::vector<std::size_t> out;
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        if (!m.at(x, y, z)) continue;
        const bool border = x == 0 || y == 0 || z == 0 || x + 1 == d.nx || y + 1 == d.ny || z + 1 == d.nz;
        if (border || !m.at(x - 1, y, z) || !m.at(x + 1, y, z) || !m.at(x, y - 1, z) || !m.at(x, y + 1, z) ||
            !m.at(x, y, z - 1) || !m.at(x, y, z + 1))
          out.push_back(m.index(x, y, z));
      }
  return out;
}

double percentile_linear(std::vector<double> v, double q) {
  require(!v.empty(), "percentile of empty set");
  require(q >= 0.0 && q <= 1.0, "percentile fraction outside [0,1]");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= v.size()) return v.back();
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared distance transform along one line (lower envelope of parabolas).
void edt_1d(std::vector<double>& f, double spacing, std::vector<std::size_t>& v, std::vector<double>& zb,
            std::vector<double>& out) {
  const std::size_t n = f.size();
  v.clear();
  zb.clear();
  auto pos = [spacing](std::size_t i) { return static_cast<double>(i) * spacing; };
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    while (!v.empty()) {
      const std::size_t p = v.back();
      const double s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
      if (s <= zb.back()) {
        v.pop_back();
        zb.pop_back();
      } else {
        zb.push_back(s);
        v.push_back(q);
        break;
      }
    }
    if (v.empty()) {
      v.push_back(q);
      zb.push_back(-kInf);
    }
  }
  out.assign(n, kInf);
  if (v.empty()) return;
  std::size_t k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (k + 1 < v.size() && zb[k + 1] < pos(q)) ++k;
    const double dq = (static_cast<double>(q) - static_cast<double>(v[k])) * spacing;
    out[q] = dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance (mm²) from every voxel to the nearest seed.
std::vector<double> squared_edt(const Dims& d, const Spacing& sp, const std::vector<std::size_t>& seeds) {
  std::vector<double> g(d.count(), kInf);
  for (std::size_t s : seeds) g[s] = 0.0;
  std::vector<double> line, out, zb;
  std::vector<std::size_t> v;
  auto pass = [&](std::size_t n, double spacing, auto idx, std::size_t outer1, std::size_t outer2) {
    line.resize(n);
    for (std::size_t a = 0; a < outer1; ++a)
      for (std::size_t b = 0; b < outer2; ++b) {
        for (std::size_t i = 0; i < n; ++i) line[i] = g[idx(i, a, b)];
        edt_1d(line, spacing, v, zb, out);
        for (std::size_t i = 0; i < n; ++i) g[idx(i, a, b)] = out[i];
      }
  };
  auto at = [&d](std::size_t x, std::size_t y, std::size_t z) { return x + d.nx * (y + d.ny * z); };
  pass(d.nx, sp.sx, [&](std::size_t i, std::size_t a, std::size_t b) { return at(i, a, b); }, d.ny, d.nz);
  pass(d.ny, sp.sy, [&](std::size_t i, std::size_t a, std::size_t b) { return at(a, i, b); }, d.nx, d.nz);
  pass(d.nz, sp.sz, [&](std::size_t i, std::size_t a, std::size_t b) { return at(a, b, i); }, d.nx, d.ny);
  return g;
}

}  // namespace

double hd95(const MaskVolume& pred, const MaskVolume& truth) {
  require_same_shape(pred, truth, "hd95");
  const auto bp = boundary_voxels(pred);
  const auto bt = boundary_voxels(truth);
  if (bp.empty() || bt.empty()) fail(ErrorCode::undefined_metric, "hd95 undefined: empty mask");
  const auto dist_to_t = squared_edt(truth.dims, truth.spacing, bt);
  const auto dist_to_p = squared_edt(pred.dims, pred.spacing, bp);
  std::vector<double> pooled;
  pooled.reserve(bp.size() + bt.size());
  for (std::size_t i : bp) pooled.push_back(std::sqrt(dist_to_t[i]));
  for (std::size_t i : bt) pooled.push_back(std::sqrt(dist_to_p[i]));
  return percentile_linear(std::move(pooled), 0.95);
}

std::optional<double> try_hd95(const MaskVolume& pred, const MaskVolume& truth) {
  try {
    return hd95(pred, truth);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::undefined_metric) return std::nullopt;
    throw;
  }
}

double dgg(double acc_src, double acc_tgt) {
  require(acc_src >= 0 && acc_src <= 1 && acc_tgt >= 0 && acc_tgt <= 1, "dgg: accuracies must lie in [0,1]");
  return acc_src - acc_tgt;
}

double cross_site_variance(std::span<const double> xs) {
  require(xs.size() >= 2, "cross-site variance needs at least 2 sites");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

SegReport seg_report(const ProbVolume& probs, const MaskVolume& truth, std::size_t B) {
  SegReport r;
  const MaskVolume pred = threshold(probs);
  r.dsc = dsc(pred, truth);
  r.hd95 = try_hd95(pred, truth);
  r.ece_voxel = ece_voxel(probs, truth, B).ece;
  r.cmp_3d = cmp_voxel(probs, pred).value;
  return r;
}

}  // namespace starfm
