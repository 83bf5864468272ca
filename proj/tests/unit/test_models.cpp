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

#include "doctest.h"
#include "oracles/finite_diff.hpp"
#include "oracles/oracles.hpp"
#include "starfm/error.hpp"
#include "starfm/models.hpp"
#include "support/gen.hpp"

using namespace starfm;

namespace {

const ModelKind kAll[] = {ModelKind::linear_softmax, ModelKind::mlp1, ModelKind::two_tower, ModelKind::voxel_linear};

ModelDims dims_for(ModelKind k) { return k == ModelKind::voxel_linear ? ModelDims{3, 0, 2} : ModelDims{4, 5, 3}; }

}  // namespace

TEST_CASE("parameter layouts") {
  CHECK(Model::create(ModelKind::linear_softmax, {4, 0, 3}, 1).param_count() == 15);
  CHECK(Model::create(ModelKind::mlp1, {4, 5, 3}, 1).param_count() == 25 + 18);
  CHECK(Model::create(ModelKind::two_tower, {4, 5, 3}, 1).param_count() == 25 + 15);
  CHECK(Model::create(ModelKind::voxel_linear, {3, 0, 2}, 1).param_count() == 4);

  const Model tt = Model::create(ModelKind::two_tower, {4, 5, 3}, 1);
  REQUIRE(tt.params().find("img_encoder") != nullptr);
  REQUIRE(tt.params().find("txt_encoder") != nullptr);
  CHECK(tt.params().find("img_encoder")->length == 25);
  CHECK(tt.params().find("head") == nullptr);
}

TEST_CASE("initialisation is seeded and bounded by 1/sqrt(fan_in)") {
  for (ModelKind k : kAll) {
    const Model a = Model::create(k, dims_for(k), 5), b = Model::create(k, dims_for(k), 5);
    CHECK(a.params().values == b.params().values);
    CHECK(a.params().values != Model::create(k, dims_for(k), 6).params().values);
  }
  const Model m = Model::create(ModelKind::linear_softmax, {16, 0, 2}, 3);
  for (double v : m.params().values) CHECK(std::fabs(v) <= 0.25);
}

TEST_CASE("from_params validates the layout") {
  const Model m = Model::create(ModelKind::mlp1, {4, 5, 3}, 1);
  ParamVector p = m.params();
  CHECK_NOTHROW(Model::from_params(ModelKind::mlp1, {4, 5, 3}, p));
  p.values.pop_back();
  CHECK_THROWS_AS(Model::from_params(ModelKind::mlp1, {4, 5, 3}, p), Error);
  ParamVector q = m.params();
  q.segments[0].name = "other";
  CHECK_THROWS_AS(Model::from_params(ModelKind::mlp1, {4, 5, 3}, q), Error);
  CHECK_THROWS_AS(Model::from_params(ModelKind::mlp1, {4, 5, 3}, m.params(), 0.0), Error);
}

TEST_CASE("classifier outputs lie on the simplex") {
  gen::Source g(3);
  for (ModelKind k : kAll) {
    const Model m = Model::create(k, dims_for(k), 2);
    for (int t = 0; t < 20; ++t) {
      const auto x = g.normals(m.dims().input, 3.0);
      const auto p = forward_classifier(m, x);
      double s = 0;
      for (double v : p) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("voxel_linear probability is a sigmoid of the affine score") {
  const Model m = Model::create(ModelKind::voxel_linear, {3, 0, 2}, 4);
  const auto& th = m.params().values;
  const std::vector<double> x{0.3, -1.2, 0.7};
  const double s = th[0] * x[0] + th[1] * x[1] + th[2] * x[2] + th[3];
  CHECK(forward_classifier(m, x)[1] == doctest::Approx(1.0 / (1.0 + std::exp(-s))).epsilon(1e-14));
}

TEST_CASE("score matches finite differences of log p(y|x)") {
  gen::Source g(4);
  for (ModelKind k : kAll) {
    const Model m = Model::create(k, dims_for(k), 7, 0.5);
    for (int t = 0; t < 10; ++t) {
      const auto x = g.normals(m.dims().input);
      const int y = static_cast<int>(g.index(0, m.classes() - 1));
      std::vector<double> sc(m.param_count());
      m.score<double>(m.params().values, x, y, sc);
      const oracle::ValueFn logp = [&](const std::vector<double>& th) {
        std::vector<double> z(m.classes());
        m.logits<double>(th, x, z);
        return static_cast<double>(std::log(oracle::softmax(z)[y]));
      };
      for (std::size_t i = 0; i < m.param_count(); ++i)
        CHECK(oracle::rel_err(sc[i], oracle::central_diff(logp, m.params().values, i)) < 1e-6);
    }
  }
}

TEST_CASE("logits_vjp matches finite differences") {
  gen::Source g(5);
  for (ModelKind k : kAll) {
    const Model m = Model::create(k, dims_for(k), 8, 0.5);
    const auto x = g.normals(m.dims().input);
    const auto dz = g.normals(m.classes());
    std::vector<double> grad(m.param_count(), 0.0);
    m.logits_vjp<double>(m.params().values, x, dz, grad);
    const oracle::ValueFn f = [&](const std::vector<double>& th) {
      std::vector<double> z(m.classes());
      m.logits<double>(th, x, z);
      double s = 0;
      for (std::size_t i = 0; i < z.size(); ++i) s += dz[i] * z[i];
      return s;
    };
    for (std::size_t i = 0; i < m.param_count(); ++i)
      CHECK(oracle::rel_err(grad[i], oracle::central_diff(f, m.params().values, i)) < 1e-6);
  }
}

TEST_CASE("tape backward without forward is a usage error") {
  Tape t;
  const std::vector<double> d{1.0, 2.0};
  try {
    t.backward(d);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::usage);
  }
}

TEST_CASE("tape backward equals summed per-sample vjp") {
  gen::Source g(6);
  const Model m = Model::create(ModelKind::mlp1, {4, 5, 3}, 1);
  const SampleBatch b = g.batch(6, 4, 3);
  Tape t;
  const auto& z = t.forward(m, m.params().values, b);
  REQUIRE(z.size() == 18);
  const auto dz = g.normals(18);
  const auto grad = t.backward(dz);
  std::vector<double> want(m.param_count(), 0.0);
  for (std::size_t i = 0; i < 6; ++i)
    m.logits_vjp<double>(m.params().values, b.row(i), std::span<const double>(dz.data() + 3 * i, 3), want);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(grad[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("segmenter features match the stencil definition") {
  gen::Source g(7);
  const Dims d{5, 4, 6};
  const VolumeGrid v = g.image(d);
  const SampleBatch f = segmenter_features(v);
  REQUIRE(f.size() == d.count());
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const auto want = oracle::stencil(v.data, d.nx, d.ny, d.nz, long(x), long(y), long(z));
        const auto row = f.row(v.index(x, y, z));
        for (int k = 0; k < 3; ++k) CHECK(row[k] == doctest::Approx(static_cast<double>(want[k])).epsilon(1e-9));
      }
  CHECK_THROWS_AS(segmenter_features(VolumeGrid(Dims{2, 4, 4})), Error);
}

TEST_CASE("forward_segmenter needs voxel_linear") {
  const Model m = Model::create(ModelKind::linear_softmax, {3, 0, 2}, 1);
  CHECK_THROWS_AS(forward_segmenter(m, VolumeGrid(Dims{4, 4, 4})), Error);
}

TEST_CASE("finite_diff_check flags a wrong gradient") {
  Rng rng(1);
  const std::vector<double> th{0.3, -0.2};
  const LossFn good = [](std::span<const double> t, std::vector<double>* g) {
    if (g) *g = {2 * t[0], 3 * t[1] * t[1]};
    return t[0] * t[0] + t[1] * t[1] * t[1];
  };
  const LossFn bad = [](std::span<const double> t, std::vector<double>* g) {
    if (g) *g = {2 * t[0], 2 * t[1]};
    return t[0] * t[0] + t[1] * t[1] * t[1];
  };
  CHECK(finite_diff_check(good, th, 2, rng).max_relative_error < 1e-6);
  CHECK(finite_diff_check(bad, th, 2, rng).max_relative_error > 1e-2);
}
