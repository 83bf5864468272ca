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

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "oracles/oracles.hpp"
#include "starfm/core_math.hpp"
#include "starfm/error.hpp"
#include "support/gen.hpp"

using namespace starfm;

TEST_CASE("softmax matches the long double reference") {
  gen::Source g(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = g.index(2, 9);
    const auto z = g.normals(k, g.uniform(0.1, 30.0));
    const double temp = g.uniform(0.05, 2.0);
    const ProbVector p = stable_softmax(z, temp);
    const auto want = oracle::softmax(z, temp);
    double sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(p[i] == doctest::Approx(static_cast<double>(want[i])).epsilon(1e-12));
      sum += p[i];
    }
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax survives huge logits") {
  const std::vector<double> z{1000.0, 999.0, -1000.0};
  const ProbVector p = stable_softmax(z);
  CHECK(std::isfinite(p[0]));
  CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(p[2] == 0.0);
}

TEST_CASE("log_sum_exp is shift invariant") {
  gen::Source g(2);
  for (int t = 0; t < 100; ++t) {
    auto z = g.normals(5, 10.0);
    const double c = g.uniform(-500, 500);
    const double a = log_sum_exp(z);
    for (auto& v : z) v += c;
    CHECK(log_sum_exp(z) - c == doctest::Approx(a).epsilon(1e-12));
  }
}

TEST_CASE("ProbVector rejects non-simplex input") {
  CHECK_THROWS_AS(ProbVector::from_values({0.5, 0.6}), Error);
  CHECK_THROWS_AS(ProbVector::from_values({-0.1, 1.1}), Error);
  CHECK_NOTHROW(ProbVector::from_values({0.25, 0.75}));
}

TEST_CASE("cosine similarity is clamped and rejects zero vectors") {
  const std::vector<double> a{1, 2, 3};
  CHECK(cosine_similarity(a, a) <= 1.0);
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  const std::vector<double> z{0, 0, 0};
  CHECK_THROWS_AS(cosine_similarity(a, z), Error);
}

TEST_CASE("sigmoid is stable at both tails") {
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(3.0) + sigmoid(-3.0) == doctest::Approx(1.0).epsilon(1e-15));
}

namespace {
std::vector<std::string> golden_lines() {
  std::ifstream in(STARFM_TEST_DATA "/rng_golden.txt");
  REQUIRE(in);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') out.push_back(line);
  return out;
}
std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}
}  // namespace

TEST_CASE("generator matches the reference stream") {
  const auto lines = golden_lines();
  REQUIRE(lines.size() == 20);
  Rng r(42);
  for (int i = 0; i < 16; ++i) CHECK(hex(r.next_u64()) == lines[i]);
  Rng s = Rng::stream(42, 3);
  for (int i = 0; i < 4; ++i) CHECK(hex(s.next_u64()) == lines[16 + i]);
}

TEST_CASE("copied generator state replays the stream") {
  Rng a(7);
  for (int i = 0; i < 5; ++i) a.next_u64();
  Rng b(a.state());
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform, below and normal have the right ranges and moments") {
  Rng r(9);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK_UNARY(u >= 0.0);
    CHECK_UNARY(u < 1.0);
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::fabs(s / n) < 0.01);
  CHECK(std::fabs(s2 / n - 1.0) < 0.02);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
  CHECK_THROWS_AS(r.below(0), Error);
}

TEST_CASE("streams with different ids differ") {
  Rng a = Rng::stream(1, 0), b = Rng::stream(1, 1), c = Rng::stream(2, 0);
  const auto x = a.next_u64();
  CHECK(x != b.next_u64());
  CHECK(x != c.next_u64());
}
