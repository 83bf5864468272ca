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
#include <optional>
#include <span>
#include <vector>

#include "starfm/core_math.hpp"
#include "starfm/volume.hpp"

namespace starfm {

struct CalibrationBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct CalibrationReport {
  double ece = 0.0;
  std::vector<CalibrationBin> bins;
  double brier = 0.0;
  std::size_t n = 0;
  std::size_t num_bins = 0;
};

struct SegReport {
  double dsc = 0.0;
  std::optional<double> hd95;  // missing when a mask is empty
  double ece_voxel = 0.0;
  double cmp_3d = 0.0;
};

struct DomainReport {
  double dgg = 0.0;
  double cross_site_std = 0.0;
};

// Bin b covers [b/B, (b+1)/B); the last bin also holds 1.0.
std::size_t ece_bin_index(double confidence, std::size_t num_bins);

// Equal-width binning. `brier` is filled as mean (correct - confidence)².
CalibrationReport ece(std::span<const double> confidences, std::span<const std::uint8_t> correct,
                      std::size_t num_bins = 10);
// Σ count/n · |acc - conf| over the report's bins.
double ece_from_bins(const CalibrationReport& report);

double accuracy(std::span<const ProbVector> probs, std::span<const int> labels);
// Confidence = max probability, correct = argmax matches the label.
CalibrationReport ece_classifier(std::span<const ProbVector> probs, std::span<const int> labels,
                                 std::size_t num_bins = 10);

enum class VoxelConfidence { argmax, foreground };
// argmax: confidence max(p, 1-p), outcome "thresholded prediction == truth".
// foreground: confidence p, outcome truth.
CalibrationReport ece_voxel(const ProbVolume& probs, const MaskVolume& truth, std::size_t num_bins = 10,
                            VoxelConfidence mode = VoxelConfidence::argmax);

// Mean (1 - P(true class))².
double brier(std::span<const ProbVector> probs, std::span<const int> labels);
// Mean (y - p)² for scalar positive-class probabilities.
double brier(std::span<const double> probs, std::span<const std::uint8_t> outcomes);
double brier(const ProbVolume& probs, const MaskVolume& truth);

// 2|A∩B| / (|A|+|B|); 1 when both masks are empty.
double dsc(const MaskVolume& pred, const MaskVolume& truth);

// Foreground voxels with a background face-neighbour or on the volume border.
std::vector<std::size_t> boundary_voxels(const MaskVolume& mask);

// Linear interpolation between order statistics at position q·(n-1).
double percentile_linear(std::vector<double> values, double q);

// Throws ErrorCode::undefined_metric when either mask is empty.
double hd95(const MaskVolume& pred, const MaskVolume& truth);
std::optional<double> try_hd95(const MaskVolume& pred, const MaskVolume& truth);

double dgg(double acc_src, double acc_tgt);
// Population standard deviation; needs at least two sites.
double cross_site_variance(std::span<const double> dsc_per_site);

SegReport seg_report(const ProbVolume& probs, const MaskVolume& truth, std::size_t num_bins = 10);

}  // namespace starfm
