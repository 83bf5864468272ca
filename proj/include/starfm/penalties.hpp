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

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "starfm/core_math.hpp"
#include "starfm/models.hpp"
#include "starfm/volume.hpp"

namespace starfm {

inline constexpr double kCmpClampEps = 1e-6;
inline constexpr std::size_t kFullFisherMaxParams = 64;

struct SymMatrix {
  std::size_t n = 0;
  std::vector<double> a;  // row-major n×n
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
  double trace() const;
};

struct FisherEstimate {
  double scalar = 0.0;
  std::map<std::string, double> per_segment;
  std::optional<SymMatrix> matrix;
};

struct PatchSpec {
  std::size_t edge = 16;
  std::size_t stride = 16;
};

struct CmpValue {
  double value = 0.0;
  std::vector<double> per_item;
};

// Provider of per-sample scores ∇θ log p(y_i|x_i; θ).
class ScoreSource {
 public:
  virtual ~ScoreSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual void score(std::span<const double> theta, std::size_t i, std::span<double> g) const = 0;
  // g = score, hv = (∇θ score)·v.
  virtual void score_hvp(std::span<const double> theta, std::size_t i, std::span<const double> v,
                         std::span<double> g, std::span<double> hv) const = 0;
};

// Scores of a Model on a SampleBatch. With `predicted_labels`, y_i is the
// model's argmax at the evaluation θ and is held fixed under differentiation.
class ModelScores final : public ScoreSource {
 public:
  ModelScores(const Model& model, const SampleBatch& batch, bool predicted_labels = false);
  std::size_t size() const override { return batch_.size(); }
  std::size_t param_count() const override { return model_.param_count(); }
  void score(std::span<const double> theta, std::size_t i, std::span<double> g) const override;
  void score_hvp(std::span<const double> theta, std::size_t i, std::span<const double> v,
                 std::span<double> g, std::span<double> hv) const override;

 private:
  int label(std::span<const double> theta, std::size_t i) const;
  const Model& model_;
  const SampleBatch& batch_;
  bool predicted_labels_;
};

// Index groups (patches) over the samples of a ScoreSource.
using PatchGroups = std::vector<std::vector<std::size_t>>;

// Non-overlapping or strided cubic tiling; trailing partial patches dropped.
PatchGroups tile_patches(const Dims& dims, const PatchSpec& spec);

double cmp_class(const ProbVector& probs, std::size_t true_label);
CmpValue cmp_vision(std::span<const ProbVector> probs, std::span<const int> labels);
// p'_v is the probability of predicted_labels[v]; clamped to 1 - kCmpClampEps.
CmpValue cmp_voxel(const ProbVolume& probs, const MaskVolume& predicted_labels);
// Uses the argmax (p >= 0.5) labels.
CmpValue cmp_voxel(const ProbVolume& probs);

// Empirical Fisher over all samples (or the listed subset).
FisherEstimate fisher_global(const ScoreSource& src, const ParamVector& params,
                             std::span<const std::size_t> subset = {});
FisherEstimate fisher_global(const Model& model, const ParamVector& params, const SampleBatch& batch);
// I(θ_img) + I(θ_txt); requires both encoder segments.
FisherEstimate fisher_vision(const Model& model, const ParamVector& params, const SampleBatch& batch);
// Average of per-patch empirical Fisher estimates.
FisherEstimate fisher_patched(const ScoreSource& src, const ParamVector& params, const PatchGroups& patches);
FisherEstimate fisher_3d(const Model& model, const ParamVector& params, const VolumeGrid& volume,
                         const MaskVolume& truth, const PatchSpec& patches);

enum class CmpForm { class_level, voxel_level };

struct PenaltyConfig {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  CmpForm cmp_form = CmpForm::class_level;
  // Evaluate the Fisher term on this batch instead (unlabelled target inputs,
  // scored with model-predicted labels).
  const SampleBatch* fisher_batch = nullptr;
};

struct PenaltyValue {
  double fip = 0.0;
  double cmp = 0.0;
  double total = 0.0;  // λ1·fip + λ2·cmp
  std::vector<double> grad;
};

// Value and gradient of λ1·FIP + λ2·CMP. Fisher groups default to one group
// holding the whole batch. CMP indicator and argmax gates are held constant.
PenaltyValue penalty_gradients(const Model& model, std::span<const double> theta,
                               const SampleBatch& batch, const PenaltyConfig& config,
                               const PatchGroups* fisher_groups = nullptr);

}  // namespace starfm
