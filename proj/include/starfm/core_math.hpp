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

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "starfm/dual.hpp"

namespace starfm {

inline constexpr double kDefaultTemperature = 0.07;
inline constexpr double kProbSumTolerance = 1e-9;

// Class probabilities for one sample. Construction through `from_values`
// validates the simplex constraint.
struct ProbVector {
  std::vector<double> values;

  static ProbVector from_values(std::vector<double> values);
  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

double log_sum_exp(std::span<const double> xs);

ProbVector stable_softmax(std::span<const double> logits, double temperature = 1.0);

// Result is clamped to [-1, 1].
double cosine_similarity(std::span<const double> a, std::span<const double> b);

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// In-place max-shifted softmax, usable with Dual.
template <class T>
void softmax_inplace(std::span<T> z) {
  using std::exp;
  T m = z[0];
  for (const T& x : z)
    if (value_of(x) > value_of(m)) m = x;
  T sum = 0.0;
  for (T& x : z) {
    x = exp(x - m);
    sum += x;
  }
  for (T& x : z) x /= sum;
}

// Counter-based generator: the n-th output is the SplitMix64 finalizer applied
// to seed + n·φ (φ = 0x9E3779B97F4A7C15). Output depends only on (seed, counter),
// so a copied state replays the same stream on any platform.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_{seed, 0} {}
  explicit Rng(RngState state) : state_(state) {}

  // Independent stream for worker `stream_id` derived from a base seed.
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; consumes two uniforms per call.
  double normal();

  const RngState& state() const { return state_; }

 private:
  RngState state_;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace starfm
