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

// Reference implementations used only by the tests. They trade speed for
// directness: long double arithmetic, exhaustive enumeration, all-pairs
// distances. None of them call into the library's numeric code.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace oracle {

using ld = long double;

inline std::vector<ld> softmax(const std::vector<double>& z, ld temperature = 1.0L) {
  std::vector<ld> e(z.size());
  ld sum = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(static_cast<ld>(z[i]) / temperature);
    sum += e[i];
  }
  for (auto& v : e) v /= sum;
  return e;
}

// Symmetric InfoNCE over cosine similarities / τ, row i paired with row i.
inline ld contrastive(const std::vector<double>& img, const std::vector<double>& txt, std::size_t n,
                      std::size_t dim, ld tau) {
  auto unit = [&](const std::vector<double>& m, std::size_t i) {
    std::vector<ld> r(dim);
    ld nn = 0;
    for (std::size_t j = 0; j < dim; ++j) {
      r[j] = m[i * dim + j];
      nn += r[j] * r[j];
    }
    nn = std::sqrt(nn);
    for (auto& v : r) v /= nn;
    return r;
  };
  std::vector<std::vector<ld>> s(n, std::vector<ld>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = unit(img, i);
    for (std::size_t k = 0; k < n; ++k) {
      const auto b = unit(txt, k);
      ld d = 0;
      for (std::size_t j = 0; j < dim; ++j) d += a[j] * b[j];
      s[i][k] = d / tau;
    }
  }
  ld li = 0, lt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ld ri = 0, ct = 0;
    for (std::size_t k = 0; k < n; ++k) {
      ri += std::exp(s[i][k]);
      ct += std::exp(s[k][i]);
    }
    li += std::log(ri) - s[i][i];
    lt += std::log(ct) - s[i][i];
  }
  return 0.5L * (li + lt) / static_cast<ld>(n);
}

// Σ over wrong classes a strictly more probable than y of p_a / Σ_{j≠a} p_j.
inline double cmp_class(const std::vector<double>& p, std::size_t y) {
  double total = 0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (a == y || !(p[a] > p[y])) continue;
    double rest = 0;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (j != a) rest += p[j];
    if (rest < std::numeric_limits<double>::min()) rest = std::numeric_limits<double>::min();
    total += p[a] / rest;
  }
  return total;
}

// Mean of p'/(1-p') with p' the argmax probability (ties to foreground),
// clamped to 1 - eps.
inline double cmp_voxel(const std::vector<double>& fg, double eps = 1e-6) {
  double s = 0;
  for (double p : fg) {
    double q = p >= 0.5 ? p : 1.0 - p;
    q = std::min(q, 1.0 - eps);
    s += q / (1.0 - q);
  }
  return s / static_cast<double>(fg.size());
}

struct Bin {
  std::size_t count = 0;
  double conf_sum = 0;
  std::size_t correct = 0;
};

// Bin b holds c with b/B <= c < (b+1)/B; the last bin also holds 1.0.
inline std::vector<Bin> bins(const std::vector<double>& conf, const std::vector<std::uint8_t>& ok, std::size_t B) {
  std::vector<Bin> out(B);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    for (std::size_t b = 0; b < B; ++b) {
      const double lo = static_cast<double>(b) / static_cast<double>(B);
      const double hi = static_cast<double>(b + 1) / static_cast<double>(B);
      if (conf[i] >= lo && (conf[i] < hi || b + 1 == B)) {
        ++out[b].count;
        out[b].conf_sum += conf[i];
        out[b].correct += ok[i] ? 1 : 0;
        break;
      }
    }
  }
  return out;
}

inline ld ece(const std::vector<double>& conf, const std::vector<std::uint8_t>& ok, std::size_t B) {
  ld e = 0;
  for (const auto& b : bins(conf, ok, B)) {
    if (!b.count) continue;
    const ld n = b.count;
    e += n / conf.size() * std::fabs(static_cast<ld>(b.correct) / n - static_cast<ld>(b.conf_sum) / n);
  }
  return e;
}

struct Vol {
  std::size_t nx, ny, nz;
  std::array<double, 3> spacing{1, 1, 1};
  std::vector<std::uint8_t> m;
  std::uint8_t at(long x, long y, long z) const {
    return m[static_cast<std::size_t>(x) + nx * (static_cast<std::size_t>(y) + ny * static_cast<std::size_t>(z))];
  }
};

// Counting form, both empty -> 1.
inline double dsc(const Vol& a, const Vol& b) {
  std::size_t i = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.m.size(); ++k) {
    na += a.m[k] != 0;
    nb += b.m[k] != 0;
    i += a.m[k] && b.m[k];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(i) / static_cast<double>(na + nb);
}

inline std::vector<std::array<long, 3>> boundary(const Vol& v) {
  std::vector<std::array<long, 3>> out;
  const long X = static_cast<long>(v.nx), Y = static_cast<long>(v.ny), Z = static_cast<long>(v.nz);
  for (long z = 0; z < Z; ++z)
    for (long y = 0; y < Y; ++y)
      for (long x = 0; x < X; ++x) {
        if (!v.at(x, y, z)) continue;
        const long nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
        bool edge = false;
        for (const auto& n : nb) {
          if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= X || n[1] >= Y || n[2] >= Z || !v.at(n[0], n[1], n[2])) {
            edge = true;
            break;
          }
        }
        if (edge) out.push_back({x, y, z});
      }
  return out;
}

// Pooled directed nearest-boundary distances, 95th percentile with linear
// interpolation at 0.95·(n-1). Empty mask -> nullopt.
inline std::optional<double> hd95(const Vol& a, const Vol& b) {
  const auto pa = boundary(a), pb = boundary(b);
  if (pa.empty() || pb.empty()) return std::nullopt;
  std::vector<double> d;
  auto directed = [&](const auto& from, const auto& to) {
    for (const auto& p : from) {
      ld best = std::numeric_limits<ld>::infinity();
      for (const auto& q : to) {
        ld s = 0;
        for (int k = 0; k < 3; ++k) {
          const ld t = static_cast<ld>(p[k] - q[k]) * a.spacing[k];
          s += t * t;
        }
        best = std::min(best, s);
      }
      d.push_back(static_cast<double>(std::sqrt(best)));
    }
  };
  directed(pa, pb);
  directed(pb, pa);
  std::sort(d.begin(), d.end());
  const double pos = 0.95 * static_cast<double>(d.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

// Stencil features of one voxel: intensity, in-bounds 6-neighbour mean,
// population variance over centre plus in-bounds neighbours.
inline std::array<ld, 3> stencil(const std::vector<float>& v, std::size_t nx, std::size_t ny, std::size_t nz, long x,
                                 long y, long z) {
  auto at = [&](long i, long j, long k) {
    return static_cast<ld>(v[static_cast<std::size_t>(i) + nx * (static_cast<std::size_t>(j) + ny * static_cast<std::size_t>(k))]);
  };
  const long nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
  std::vector<ld> vals{at(x, y, z)};
  ld nsum = 0;
  int cnt = 0;
  for (const auto& n : nb) {
    if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= long(nx) || n[1] >= long(ny) || n[2] >= long(nz)) continue;
    const ld a = at(n[0], n[1], n[2]);
    nsum += a;
    ++cnt;
    vals.push_back(a);
  }
  ld mean = 0;
  for (ld a : vals) mean += a;
  mean /= vals.size();
  ld var = 0;
  for (ld a : vals) var += (a - mean) * (a - mean);
  var /= vals.size();
  return {at(x, y, z), nsum / cnt, var};
}

// Patch-wise Fisher trace of the voxel logistic model θ = (w0, w1, w2, b),
// whose score at voxel v is (y_v - σ(w·f_v + b))·(f_v, 1). Patches are
// enumerated by origin on the stride lattice, keeping only full patches.
inline ld fisher_3d(const std::vector<double>& theta, const std::vector<float>& img, const std::vector<std::uint8_t>& y,
                    std::size_t nx, std::size_t ny, std::size_t nz, std::size_t edge, std::size_t stride) {
  ld total = 0;
  std::size_t patches = 0;
  for (std::size_t oz = 0; oz + edge <= nz; oz += stride)
    for (std::size_t oy = 0; oy + edge <= ny; oy += stride)
      for (std::size_t ox = 0; ox + edge <= nx; ox += stride) {
        ld s = 0;
        for (std::size_t z = oz; z < oz + edge; ++z)
          for (std::size_t yy = oy; yy < oy + edge; ++yy)
            for (std::size_t x = ox; x < ox + edge; ++x) {
              const auto f = stencil(img, nx, ny, nz, long(x), long(yy), long(z));
              const ld a = theta[0] * f[0] + theta[1] * f[1] + theta[2] * f[2] + theta[3];
              const ld p = 1.0L / (1.0L + std::exp(-a));
              const ld r = static_cast<ld>(y[x + nx * (yy + ny * z)] ? 1 : 0) - p;
              s += r * r * (f[0] * f[0] + f[1] * f[1] + f[2] * f[2] + 1.0L);
            }
        total += s / static_cast<ld>(edge * edge * edge);
        ++patches;
      }
  return total / static_cast<ld>(patches);
}

}  // namespace oracle
