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
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "starfm/io.hpp"
#include "starfm/shiftgen.hpp"
#include "starfm/trainer.hpp"

namespace starfm {

enum class Task { vision, medical };

std::string_view to_string(Task t);

struct ModelSpec {
  ModelKind kind = ModelKind::linear_softmax;
  std::size_t hidden = 8;
  double temperature = kDefaultTemperature;
};

struct VolumeSpec {
  std::size_t sites = 3;
  std::size_t per_site = 3;
  std::size_t edge = 16;
};

struct ExperimentConfig {
  Task task = Task::vision;
  std::uint64_t seed = 0;
  ModelSpec model;
  ShiftSpec shift;     // vision
  VolumeSpec volumes;  // medical
  TrainConfig train;
  std::optional<SweepGrid> sweep;
  std::string out_dir = "out";
  std::vector<std::string> formats{"csv"};
  // The input document with command-line overrides applied.
  Json echo;

  ModelDims model_dims() const;
};

// Rejects unknown keys and ill-typed values with a configuration error
// naming the key path.
ExperimentConfig parse_config(const Json& doc);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> format;
};
Json apply_overrides(Json doc, const Overrides& o);

// In-memory dataset of either task.
struct Dataset {
  Task task = Task::vision;
  std::optional<ShiftedDataset> vision;
  std::optional<SyntheticVolumeSet> volumes;
};

Dataset generate_dataset(const ExperimentConfig& cfg);
// Writes dataset files plus manifest.json under `dir`; returns the manifest.
Json write_dataset(const fs::path& dir, const Dataset& data);
// Validates headers (errors name the field) and manifest checksums.
Dataset read_dataset(const fs::path& dir);

RunReport run_training(const ExperimentConfig& cfg, const Dataset& data, const TrainConfig& train);

Json report_json(const RunReport& report, const ExperimentConfig& cfg);
std::string metrics_csv(const RunReport& report);

struct SummaryRow {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  bool ok = false;
  double primary = 0.0;  // accuracy (vision) or mean target DSC (medical)
  double ece = 0.0;
  std::optional<double> hd95;
  double dgg = 0.0;
  std::string error;
  bool operator==(const SummaryRow&) const = default;
};

std::vector<SummaryRow> summarize(Task task, const std::vector<SweepPoint>& points);
std::string summary_csv(Task task, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> parse_summary_csv(std::string_view text);

// Reliability rows (bin edges, confidence, accuracy, count) from a report.
std::string reliability_csv(const Json& report);
// Bound rows with a holds flag per run; csv or json text.
std::string bounds_summary(const Json& report, bool as_json);
// ECE recomposed from the report's bins.
double ece_from_report(const Json& report);

// Out-dir layout.
fs::path dataset_dir(const ExperimentConfig& cfg);
fs::path run_dir(const ExperimentConfig& cfg);
fs::path sweep_dir(const ExperimentConfig& cfg);

void cmd_gen(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_sweep(const ExperimentConfig& cfg, std::size_t jobs);
void cmd_report(const ExperimentConfig& cfg);
// Built-in property and brute-force checks; one line per check on `out`.
bool cmd_check(std::ostream& out, std::uint64_t seed);

}  // namespace starfm
