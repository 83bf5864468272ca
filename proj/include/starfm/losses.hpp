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

#include <span>
#include <vector>

#include "starfm/models.hpp"
#include "starfm/penalties.hpp"
#include "starfm/volume.hpp"

namespace starfm {

inline constexpr double kBceClampEps = 1e-7;

// Paired image/text embeddings; row i of each matrix forms the positive pair.
struct EmbeddingBatch {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> image;  // n×dim
  std::vector<double> text;   // n×dim
  double temperature = kDefaultTemperature;
};

struct ContrastiveResult {
  double value = 0.0;
  std::vector<double> d_image;  // ∂L/∂(raw image embeddings)
  std::vector<double> d_text;
};

double contrastive_loss(const EmbeddingBatch& batch);
ContrastiveResult contrastive_loss_grad(const EmbeddingBatch& batch);

// 1 - 2|A∩B| / (|A|+|B|); 0 when both masks are empty.
double dice_loss(const MaskVolume& pred, const MaskVolume& truth);
// Soft variant with probabilities in place of the predicted indicator.
double soft_dice_loss(const ProbVolume& pred, const MaskVolume& truth);
double bce_loss(const ProbVolume& pred, const MaskVolume& truth);
// Dice + BCE on probabilities.
double sam_loss(const ProbVolume& pred, const MaskVolume& truth);

// Samples for the segmentation objective. Probabilities are P(class 1) per
// sample, laid out as a flat volume; Fisher patches index into the samples.
struct SegmentationBatch {
  SampleBatch samples;
  PatchGroups patches;
};

// A volume with stencil features and cubic Fisher patches.
SegmentationBatch make_volume_batch(const VolumeGrid& volume, const MaskVolume& truth,
                                    const PatchSpec& patches);
// Flat sample batch (binary classifier) treated as a single patch.
SegmentationBatch make_flat_batch(const SampleBatch& samples);

struct LossValue {
  double total = 0.0;
  double base = 0.0;
  double fip = 0.0;
  double cmp = 0.0;
  std::vector<double> grad;
};

struct ObjectiveConfig {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  const SampleBatch* fisher_batch = nullptr;
};

// Contrastive loss (two_tower) or mean cross-entropy (other models)
// + λ1·FIP + λ2·class-level CMP.
LossValue loss_vision(const Model& model, std::span<const double> theta, const SampleBatch& batch,
                      const ObjectiveConfig& config);

// Soft Dice + BCE on P(class 1) + λ1·patch-wise FIP + λ2·voxel-level CMP.
LossValue loss_medical(const Model& model, std::span<const double> theta, const SegmentationBatch& batch,
                       const ObjectiveConfig& config);

// Base task loss only (λ = 0), value without gradient.
double base_loss_vision(const Model& model, std::span<const double> theta, const SampleBatch& batch);

}  // namespace starfm
