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
#include <string_view>
#include <vector>

#include "starfm/models.hpp"
#include "starfm/volume.hpp"

namespace starfm {

enum class ShiftKind { mean_shift, covariance_scale, site_intensity };

std::string_view to_string(ShiftKind kind);
ShiftKind shift_kind_from_string(std::string_view s);

struct ShiftSpec {
  ShiftKind kind = ShiftKind::mean_shift;
  double magnitude = 0.0;
  std::size_t n_src = 1000;
  std::size_t n_tgt = 1000;
  std::size_t classes = 2;
  std::size_t dim = 2;
  std::uint64_t seed = 0;
  // Probability that a label is flipped away from the decision rule's class.
  double label_noise = 0.2;
};

// Isotropic Gaussian N(mean, scale² I).
struct IsoGaussian {
  std::vector<double> mean;
  double scale = 1.0;
  double log_density(std::span<const double> x) const;
};

// Decision rule argmax_k prototype_k·x with symmetric label noise, shared by
// both splits: P(y = rule(x) | x) = 1 - noise, the remaining mass spread
// evenly over the other classes. Labels are a deterministic function of x and
// a stored uniform u.
struct ConditionalRule {
  std::size_t classes = 2;
  std::size_t dim = 0;
  std::vector<double> prototypes;  // classes×dim, unit rows
  double noise = 0.1;

  int decide(std::span<const double> x) const;
  std::vector<double> probabilities(std::span<const double> x) const;
  int label(std::span<const double> x, double u) const;
};

struct ShiftedDataset {
  ShiftSpec spec;
  IsoGaussian source_density;
  IsoGaussian target_density;
  ConditionalRule rule;
  SampleBatch source;
  SampleBatch target;
  std::vector<double> source_uniforms;
  std::vector<double> target_uniforms;
  // P_tgt(x)/P_src(x) at each source point.
  std::vector<double> importance_weights;

  double importance_weight(std::span<const double> x) const;
  // KL(P_tgt || P_src) of the feature marginals.
  double kl_target_source() const;
};

ConditionalRule make_rule(const ShiftSpec& spec);
// mean_shift translates along the unit discriminant prototype_1 - prototype_0.
IsoGaussian target_marginal(const ShiftSpec& spec, const ConditionalRule& rule);
double kl_gaussian(const IsoGaussian& p, const IsoGaussian& q);

ShiftedDataset gen_classification(const ShiftSpec& spec);

struct SiteParams {
  double gain = 1.0;
  double offset = 0.0;
  double noise = 0.0;
};

struct VolumeSample {
  VolumeGrid image;
  MaskVolume mask;
};

struct SyntheticVolumeSet {
  std::vector<std::vector<VolumeSample>> sites;
  std::vector<SiteParams> site_params;
};

struct Ellipsoid {
  double cx, cy, cz;
  double ax, ay, az;
};

// Voxel centres inside the ellipsoid are set to 1.
void rasterize_ellipsoid(MaskVolume& mask, const Ellipsoid& e);

// Site 0 uses the identity transform; others draw gain/offset/noise from the
// seed unless `site_params` is given explicitly.
SyntheticVolumeSet gen_volumes(std::size_t n_sites, std::size_t volumes_per_site, std::size_t edge,
                               std::uint64_t seed, const std::vector<SiteParams>* site_params = nullptr);

}  // namespace starfm
