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

#include "starfm/core_math.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <string>

#include "starfm/error.hpp"

namespace starfm {

ProbVector ProbVector::from_values(std::vector<double> values) {
  require(values.size() >= 2, "probability vector needs at least 2 classes");
  double sum = 0.0;
  for (double p : values) {
    require(std::isfinite(p) && p >= 0.0 && p <= 1.0,
            "probability outside [0,1]");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= kProbSumTolerance,
          "probabilities do not sum to 1 (sum=" + std::to_string(sum) + ")");
  return ProbVector{std::move(values)};
}

double log_sum_exp(std::span<const double> xs) {
  require(!xs.empty(), "log_sum_exp of empty vector");
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) {
    if (!std::isfinite(x)) fail(ErrorCode::numerical, "non-finite input to log_sum_exp");
    m = std::max(m, x);
  }
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

ProbVector stable_softmax(std::span<const double> logits, double temperature) {
  require(std::isfinite(temperature) && temperature > 0.0,
          "softmax temperature must be positive");
  require(logits.size() >= 2, "softmax needs at least 2 logits");
  std::vector<double> z(logits.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) fail(ErrorCode::numerical, "non-finite logit");
    z[i] = logits[i] / temperature;
    m = std::max(m, z[i]);
  }
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
  return ProbVector{std::move(z)};
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(), "cosine similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  require(na > 0.0 && nb > 0.0, "cosine similarity: zero-norm vector");
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng Rng::stream(std::uint64_t seed, std::uint64_t stream_id) {
  return Rng(splitmix64_mix(seed ^ splitmix64_mix(stream_id + 0x632BE59BD9B4E019ULL)));
}

std::uint64_t Rng::next_u64() {
  ++state_.counter;
  return splitmix64_mix(state_.seed + state_.counter * 0x9E3779B97F4A7C15ULL);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  require(n > 0, "Rng::below(0)");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace starfm
