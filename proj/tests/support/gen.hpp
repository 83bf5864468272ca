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

// Hand-rolled generators for property tests. Seeded std::mt19937_64 keeps
// them independent of the library's own generator.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "starfm/models.hpp"
#include "starfm/volume.hpp"

namespace gen {

struct Source {
  std::mt19937_64 eng;
  explicit Source(std::uint64_t seed) : eng(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(eng); }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng);
  }
  bool coin(double p = 0.5) { return uniform() < p; }

  std::vector<double> normals(std::size_t n, double sd = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(sd);
    return v;
  }

  // Random point on the simplex; with `spiky`, one class dominates.
  std::vector<double> simplex(std::size_t k, bool spiky = false) {
    std::vector<double> p(k);
    double s = 0;
    for (auto& x : p) {
      x = -std::log(uniform(1e-12, 1.0));
      s += x;
    }
    if (spiky) {
      p[index(0, k - 1)] += 20.0 * s;
      s *= 21.0;
    }
    for (auto& x : p) x /= s;
    return p;
  }

  starfm::Dims dims(std::size_t lo, std::size_t hi) { return {index(lo, hi), index(lo, hi), index(lo, hi)}; }

  starfm::MaskVolume mask(starfm::Dims d, double density) {
    starfm::MaskVolume m(d);
    for (auto& v : m.data) v = coin(density) ? 1 : 0;
    return m;
  }

  // Blob-shaped mask: union of a few random balls.
  starfm::MaskVolume blobs(starfm::Dims d, int count) {
    starfm::MaskVolume m(d);
    for (int b = 0; b < count; ++b) {
      const double cx = uniform(0, double(d.nx)), cy = uniform(0, double(d.ny)), cz = uniform(0, double(d.nz));
      const double r = uniform(1.0, 3.5);
      for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
          for (std::size_t x = 0; x < d.nx; ++x) {
            const double dx = x - cx, dy = y - cy, dz = z - cz;
            if (dx * dx + dy * dy + dz * dz <= r * r) m.at(x, y, z) = 1;
          }
    }
    return m;
  }

  starfm::VolumeGrid image(starfm::Dims d) {
    starfm::VolumeGrid v(d);
    for (auto& x : v.data) x = static_cast<float>(normal());
    return v;
  }

  starfm::ProbVolume probs(starfm::Dims d) {
    starfm::ProbVolume v(d);
    for (auto& x : v.data) x = uniform();
    return v;
  }

  starfm::SampleBatch batch(std::size_t n, std::size_t dim, std::size_t classes) {
    starfm::SampleBatch b;
    b.dim = dim;
    b.features = normals(n * dim);
    for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(index(0, classes - 1)));
    return b;
  }
};

}  // namespace gen
