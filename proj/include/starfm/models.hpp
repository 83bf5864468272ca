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

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "starfm/core_math.hpp"
#include "starfm/volume.hpp"

namespace starfm {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  bool operator==(const Segment&) const = default;
};

// Flat parameter vector with named, disjoint, covering segments.
struct ParamVector {
  std::vector<double> values;
  std::vector<Segment> segments;

  std::size_t size() const { return values.size(); }
  const Segment* find(std::string_view name) const;
  void validate() const;
  static ParamVector zeros_like(const ParamVector& p);
};

enum class ModelKind { linear_softmax, mlp1, two_tower, voxel_linear };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

// input: feature dimension; hidden: hidden width (mlp1) or embedding width
// (two_tower); classes: number of output classes.
struct ModelDims {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t classes = 2;
  bool operator==(const ModelDims&) const = default;
};

// Row-major n×dim features with integer labels.
struct SampleBatch {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  SampleBatch subset(std::span<const std::size_t> idx) const;
};

inline constexpr std::size_t kStencilFeatures = 3;

class Model {
 public:
  Model() = default;
  // Parameters drawn uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static Model create(ModelKind kind, ModelDims dims, std::uint64_t seed,
                      double temperature = kDefaultTemperature);
  // Wraps existing parameters; validates layout against dims.
  static Model from_params(ModelKind kind, ModelDims dims, ParamVector params,
                           double temperature = kDefaultTemperature);

  ModelKind kind() const { return kind_; }
  const ModelDims& dims() const { return dims_; }
  std::size_t classes() const { return dims_.classes; }
  double temperature() const { return temperature_; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  // Per-sample logits z(θ, x). For voxel_linear, z = [0, s] so that
  // softmax(z)[1] = sigmoid(s).
  template <class T>
  void logits(std::span<const T> theta, std::span<const double> x, std::span<T> z) const;

  // grad += (∂z/∂θ)ᵀ dz.
  template <class T>
  void logits_vjp(std::span<const T> theta, std::span<const double> x, std::span<const T> dz,
                  std::span<T> grad) const;

  // g = ∇θ log softmax(z(θ, x))[y].
  template <class T>
  void score(std::span<const T> theta, std::span<const double> x, int y, std::span<T> g) const;

  // two_tower only: raw (unnormalized) image embedding W x + b, and the raw
  // text embedding of class k.
  void embed_image(std::span<const double> theta, std::span<const double> x,
                   std::span<double> e) const;
  void embed_text(std::span<const double> theta, std::size_t k, std::span<double> t) const;
  // Accumulate gradients from d(raw image embedding) and d(raw text embedding of class k).
  void embed_image_vjp(std::span<const double> x, std::span<const double> de,
                       std::span<double> grad) const;
  void embed_text_vjp(std::size_t k, std::span<const double> dt, std::span<double> grad) const;

 private:
  ModelKind kind_ = ModelKind::linear_softmax;
  ModelDims dims_;
  double temperature_ = kDefaultTemperature;
  ParamVector params_;
};

// Softmax class probabilities for one sample.
std::vector<double> forward_classifier(const Model& model, std::span<const double> x);

// Stencil features per voxel: intensity, mean of in-bounds 6-neighbours,
// population variance over centre plus in-bounds neighbours.
SampleBatch segmenter_features(const VolumeGrid& volume, const MaskVolume* truth = nullptr);

ProbVolume forward_segmenter(const Model& model, const VolumeGrid& volume);

// Records a forward pass over a batch so that backward() can map logit
// gradients to a parameter gradient.
class Tape {
 public:
  const std::vector<double>& forward(const Model& model, std::span<const double> theta,
                                     const SampleBatch& batch);
  // dlogits: n×K row-major, same layout as the recorded logits.
  std::vector<double> backward(std::span<const double> dlogits) const;
  bool recorded() const { return model_ != nullptr; }

 private:
  const Model* model_ = nullptr;
  const SampleBatch* batch_ = nullptr;
  std::vector<double> theta_;
  std::vector<double> logits_;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked_coordinates = 0;
  double step = 0.0;
  std::size_t worst_coordinate = 0;
};

// Value plus analytic gradient at θ.
using LossFn = std::function<double(std::span<const double> theta, std::vector<double>* grad)>;

// Per-coordinate error is |a - f| / max(|a|, |f|, floor) with floor = 1e-3,
// i.e. a relative test that degrades to an absolute 1e-7 bound near zero
// when compared against 1e-4.
GradCheckReport finite_diff_check(const LossFn& loss, std::span<const double> theta,
                                  std::size_t trials, Rng& rng, double step = 1e-5);

}  // namespace starfm
