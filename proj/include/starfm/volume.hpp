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

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "starfm/error.hpp"

namespace starfm {

struct Dims {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::size_t count() const { return nx * ny * nz; }
  bool operator==(const Dims&) const = default;
};

// Millimetres per voxel along x, y, z.
struct Spacing {
  double sx = 1.0, sy = 1.0, sz = 1.0;
  bool operator==(const Spacing&) const = default;
};

// Dense H×W×D grid, x fastest, then y, then z.
template <class T>
struct Grid {
  Dims dims;
  Spacing spacing;
  std::vector<T> data;

  Grid() = default;
  Grid(Dims d, Spacing s = {}, T fill = T{}) : dims(d), spacing(s), data(d.count(), fill) {
    require(d.nx > 0 && d.ny > 0 && d.nz > 0, "volume dimensions must be positive");
    require(s.sx > 0 && s.sy > 0 && s.sz > 0, "voxel spacing must be positive");
  }

  std::size_t size() const { return data.size(); }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims.nx * (y + dims.ny * z);
  }
  T& at(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
  const T& at(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
};

using VolumeGrid = Grid<float>;
using MaskVolume = Grid<std::uint8_t>;
using ProbVolume = Grid<double>;

template <class A, class B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  require(a.dims == b.dims, std::string(what) + ": volume shape mismatch");
}

// Foreground where p >= 0.5.
inline MaskVolume threshold(const ProbVolume& p) {
  MaskVolume m(p.dims, p.spacing);
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = p[i] >= 0.5 ? 1 : 0;
  return m;
}

}  // namespace starfm
