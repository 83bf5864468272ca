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

// starfm: command-line driver over the C API.

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "starfm/starfm.h"

namespace {

int report_failure(const char* what, starfm_status s) {
  std::fprintf(stderr, "starfm %s: %s\n", what, starfm_last_error());
  return starfm_exit_code(s);
}

void print_line(const char* line, void*) { std::printf("%s\n", line); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fisher and confidence-misalignment regularized training on synthetic shift benchmarks"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::size_t> jobs;
  std::string format;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", config_path, "experiment config (JSON)");
    if (config_required) opt->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--jobs", jobs, "parallel sweep points (default: $STARFM_JOBS or 1)")->check(CLI::PositiveNumber);
    sub->add_option("--format", format, "summary format")->check(CLI::IsMember({"json", "csv"}));
  };
  auto* gen = app.add_subcommand("gen", "generate the dataset and its manifest");
  auto* train = app.add_subcommand("train", "train one run and write report.json");
  auto* sweep = app.add_subcommand("sweep", "train every lambda grid point");
  auto* report = app.add_subcommand("report", "write reliability and bounds tables for a run");
  auto* check = app.add_subcommand("check", "run the built-in property and oracle checks");
  add_common(gen, true);
  add_common(train, true);
  add_common(sweep, true);
  add_common(report, false);
  add_common(check, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (!jobs) {
    if (const char* env = std::getenv("STARFM_JOBS"); env && *env) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (*end != '\0' || v < 1) {
        std::fprintf(stderr, "starfm: STARFM_JOBS must be a positive integer, got \"%s\"\n", env);
        return 1;
      }
      jobs = static_cast<std::size_t>(v);
    }
  }

  if (check->parsed()) {
    int ok = 0;
    const starfm_status s = starfm_check(seed.value_or(0), print_line, nullptr, &ok);
    if (s != STARFM_OK) return report_failure("check", s);
    return ok ? 0 : 4;
  }

  starfm_overrides ov{};
  ov.has_seed = seed.has_value();
  ov.seed = seed.value_or(0);
  ov.out_dir = out_dir.empty() ? nullptr : out_dir.c_str();
  ov.format = format.empty() ? nullptr : format.c_str();

  starfm_experiment* exp = nullptr;
  starfm_status s = config_path.empty() ? starfm_experiment_create("{}", &ov, &exp)
                                        : starfm_experiment_open(config_path.c_str(), &ov, &exp);
  if (s != STARFM_OK) {
    std::fprintf(stderr, "starfm: %s\n", starfm_last_error());
    return starfm_exit_code(s);
  }

  const char* what = "";
  if (gen->parsed()) {
    what = "gen";
    s = starfm_experiment_gen(exp);
  } else if (train->parsed()) {
    what = "train";
    s = starfm_experiment_train(exp);
  } else if (sweep->parsed()) {
    what = "sweep";
    s = starfm_experiment_sweep(exp, jobs.value_or(1));
  } else if (report->parsed()) {
    what = "report";
    s = starfm_experiment_report(exp);
  }
  if (s == STARFM_OK) std::printf("%s: wrote %s\n", what, starfm_experiment_out_dir(exp));
  starfm_experiment_free(exp);
  return s == STARFM_OK ? 0 : report_failure(what, s);
}
