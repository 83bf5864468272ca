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
#include <set>

#include "doctest.h"
#include "starfm/experiment.hpp"
#include "support/schema.hpp"
#include "support/tmpdir.hpp"

using namespace starfm;

namespace {

Json vision_doc(const fs::path& out) {
  return Json{{"task", "vision"},
              {"seed", 4},
              {"model", {{"kind", "linear_softmax"}}},
              {"shift", {{"kind", "mean_shift"}, {"magnitude", 1.5}, {"n_src", 200}, {"n_tgt", 150}, {"dim", 3}}},
              {"train", {{"learning_rate", 0.05}, {"epochs", 4}, {"lambda1", 0.2}, {"lambda2", 0.3}}},
              {"sweep", {{"lambda1", {0.0, 0.5}}, {"lambda2", {0.0, 0.4}}}},
              {"output", {{"dir", out.string()}, {"formats", {"csv", "json"}}}}};
}

Json medical_doc(const fs::path& out) {
  return Json{{"task", "medical"},
              {"seed", 2},
              {"volumes", {{"sites", 2}, {"per_site", 2}, {"edge", 16}}},
              {"train", {{"learning_rate", 0.1}, {"epochs", 2}, {"lambda1", 0.1}, {"lambda2", 0.1}, {"patch_edge", 8}}},
              {"sweep", {{"lambda1", {0.0}}, {"lambda2", {0.0, 0.5}}}},
              {"output", {{"dir", out.string()}}}};
}

ErrorCode code_of(const std::function<void()>& f, std::string* msg = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (msg) *msg = e.what();
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::usage;
}

Json load_schema() { return read_json_file(fs::path(STARFM_SCHEMA_DIR) / "run_report.schema.json"); }

std::set<std::string> files_in(const fs::path& dir) {
  std::set<std::string> s;
  for (const auto& e : fs::directory_iterator(dir)) s.insert(e.path().filename().string());
  return s;
}

void overwrite(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_CASE("config defaults and derived fields") {
  const ExperimentConfig c = parse_config(Json::object());
  CHECK(c.task == Task::vision);
  CHECK(c.model.kind == ModelKind::linear_softmax);
  CHECK(c.train.learning_rate == 1e-4);
  CHECK(c.train.num_bins == 10);
  CHECK(c.train.patches.edge == 16);
  CHECK(c.shift.label_noise == 0.2);
  const ExperimentConfig m = parse_config(Json{{"task", "medical"}, {"seed", 9}});
  CHECK(m.model.kind == ModelKind::voxel_linear);
  CHECK(m.model_dims() == ModelDims{3, m.model.hidden, 2});
  CHECK(m.train.seed == 9);
  CHECK(m.shift.seed == 9);
}

TEST_CASE("unknown keys and bad values are configuration errors naming the key") {
  std::string msg;
  CHECK(code_of([] { parse_config(Json{{"sede", 1}}); }, &msg) == ErrorCode::configuration);
  CHECK(msg.find("'sede'") != std::string::npos);
  CHECK(code_of([] { parse_config(Json{{"train", {{"epochs", 1}, {"lr", 0.1}}}}); }, &msg) == ErrorCode::configuration);
  CHECK(msg.find("'train.lr'") != std::string::npos);
  CHECK(code_of([] { parse_config(Json{{"train", {{"epochs", -1}}}}); }, &msg) == ErrorCode::configuration);
  CHECK(msg.find("train.epochs") != std::string::npos);
  CHECK(code_of([] { parse_config(Json{{"model", {{"kind", "resnet"}}}}); }) == ErrorCode::configuration);
  CHECK(code_of([] { parse_config(Json{{"task", "medical"}, {"model", {{"kind", "two_tower"}}}}); }) ==
        ErrorCode::configuration);
  CHECK(code_of([] { parse_config(Json{{"volumes", {{"edge", 8}}}}); }) == ErrorCode::configuration);
  CHECK(code_of([] { parse_config(Json{{"sweep", {{"lambda1", {0.5, 0.1}}}}}); }) == ErrorCode::configuration);
  CHECK(code_of([] { parse_config(Json::array()); }) == ErrorCode::configuration);
}

TEST_CASE("overrides replace seed, out dir and format") {
  Overrides o;
  o.seed = 77;
  o.out_dir = "elsewhere";
  o.format = "json";
  const Json doc = apply_overrides(vision_doc("x"), o);
  const ExperimentConfig c = parse_config(doc);
  CHECK(c.seed == 77);
  CHECK(c.out_dir == "elsewhere");
  CHECK(c.formats == std::vector<std::string>{"json"});
  CHECK(c.echo["seed"] == 77);
  Overrides bad;
  bad.format = "xml";
  CHECK(code_of([&] { apply_overrides(vision_doc("x"), bad); }) == ErrorCode::usage);
}

TEST_CASE("config echo round trips through the report") {
  gen::TempDir dir("exp_echo");
  const ExperimentConfig c = parse_config(vision_doc(dir.path));
  cmd_gen(c);
  cmd_train(c);
  const Json report = read_json_file(run_dir(c) / "report.json");
  CHECK(report["config"] == c.echo);
  const ExperimentConfig again = parse_config(report["config"]);
  CHECK(canonical_json(again.echo) == canonical_json(c.echo));
  CHECK(again.train.lambda2 == c.train.lambda2);
}

TEST_CASE("vision dataset files, manifest and round trip") {
  gen::TempDir dir("exp_vision_data");
  const ExperimentConfig c = parse_config(vision_doc(dir.path));
  cmd_gen(c);
  const fs::path d = dataset_dir(c);
  const Json manifest = read_json_file(d / "manifest.json");
  std::set<std::string> listed;
  for (const auto& e : manifest["files"]) {
    listed.insert(e["path"].get<std::string>());
    const std::string bytes = read_file(d / e["path"].get<std::string>());
    CHECK(e["bytes"] == bytes.size());
    CHECK(e["sha256"] == sha256_hex(bytes));
  }
  std::set<std::string> present = files_in(d);
  present.erase("manifest.json");
  CHECK(listed == present);

  const Dataset mem = generate_dataset(c);
  const Dataset disk = read_dataset(d);
  REQUIRE(disk.vision.has_value());
  CHECK(disk.vision->source.features == mem.vision->source.features);
  CHECK(disk.vision->source.labels == mem.vision->source.labels);
  CHECK(disk.vision->target.features == mem.vision->target.features);
  CHECK(disk.vision->importance_weights == mem.vision->importance_weights);
  CHECK(disk.vision->rule.prototypes == mem.vision->rule.prototypes);

  const std::string first = read_file(d / "manifest.json");
  cmd_gen(c);
  CHECK(read_file(d / "manifest.json") == first);
}

TEST_CASE("tampered datasets are rejected") {
  gen::TempDir dir("exp_tamper");
  const ExperimentConfig c = parse_config(vision_doc(dir.path));
  cmd_gen(c);
  const fs::path d = dataset_dir(c);
  std::string csv = read_file(d / "target.csv");
  csv[csv.size() - 2] = csv[csv.size() - 2] == '1' ? '2' : '1';
  overwrite(d / "target.csv", csv);
  std::string msg;
  CHECK(code_of([&] { read_dataset(d); }, &msg) == ErrorCode::invalid_input);
  CHECK(msg.find("target.csv") != std::string::npos);

  cmd_gen(c);
  Json head = read_json_file(d / "dataset.json");
  head["spec"]["dim"] = "three";
  overwrite(d / "dataset.json", head.dump());
  CHECK(code_of([&] { read_dataset(d); }, &msg) == ErrorCode::invalid_input);
  CHECK(msg.find("'dim'") != std::string::npos);

  fs::remove_all(d);
  CHECK(code_of([&] { cmd_train(c); }, &msg) == ErrorCode::invalid_input);
  CHECK(msg.find("run gen first") != std::string::npos);
}

TEST_CASE("medical dataset round trip is bit-exact") {
  gen::TempDir dir("exp_medical_data");
  const ExperimentConfig c = parse_config(medical_doc(dir.path));
  cmd_gen(c);
  const Dataset mem = generate_dataset(c);
  const Dataset disk = read_dataset(dataset_dir(c));
  REQUIRE(disk.volumes.has_value());
  REQUIRE(disk.volumes->sites.size() == 2);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t v = 0; v < 2; ++v) {
      CHECK(disk.volumes->sites[s][v].image.data == mem.volumes->sites[s][v].image.data);
      CHECK(disk.volumes->sites[s][v].mask.data == mem.volumes->sites[s][v].mask.data);
    }
  CHECK(files_in(dataset_dir(c)).count("site1_vol0_image.raw") == 1);
}

TEST_CASE("vision report satisfies the schema and recomposes its ECE") {
  gen::TempDir dir("exp_vision_report");
  ExperimentConfig c = parse_config(vision_doc(dir.path));
  cmd_gen(c);
  cmd_train(c);
  const Json report = read_json_file(run_dir(c) / "report.json");
  CHECK(schema::validate(report, load_schema()) == "");
  CHECK(report["calibration"]["bins"].size() == 10);
  CHECK(std::fabs(ece_from_report(report) - report["calibration"]["ece"].get<double>()) <= 1e-12);
  CHECK(report["risk_bound"].is_object());
  CHECK(report["ece_bound"].is_null());

  const CsvTable metrics = parse_csv(read_file(run_dir(c) / "metrics.csv"));
  CHECK(metrics.size() == 5);
  CHECK(metrics[0] == std::vector<std::string>{"epoch", "loss", "target_metric", "target_ece"});

  const Model m = load_checkpoint(run_dir(c) / "params.ckpt");
  CHECK(m.param_count() == report["model"]["param_count"].get<std::size_t>());

  cmd_report(c);
  const CsvTable rel = parse_csv(read_file(run_dir(c) / "reliability.csv"));
  CHECK(rel.size() == 11);
  const CsvTable bounds = parse_csv(read_file(run_dir(c) / "bounds.csv"));
  REQUIRE(bounds.size() == 2);
  CHECK(bounds[1][0] == "risk_shift");
  const Json bj = read_json_file(run_dir(c) / "bounds.json");
  CHECK(bj["bounds"].size() == 1);
}

TEST_CASE("bin count follows the config") {
  gen::TempDir dir("exp_bins");
  Json doc = vision_doc(dir.path);
  doc["bins"] = 7;
  const ExperimentConfig c = parse_config(doc);
  cmd_gen(c);
  cmd_train(c);
  const Json report = read_json_file(run_dir(c) / "report.json");
  CHECK(report["calibration"]["bins"].size() == 7);
  CHECK(report["calibration"]["bins"][6]["hi"] == 1.0);
}

TEST_CASE("report rejects an inconsistent ECE") {
  gen::TempDir dir("exp_bad_ece");
  const ExperimentConfig c = parse_config(vision_doc(dir.path));
  cmd_gen(c);
  cmd_train(c);
  Json report = read_json_file(run_dir(c) / "report.json");
  report["calibration"]["ece"] = report["calibration"]["ece"].get<double>() + 0.01;
  overwrite(run_dir(c) / "report.json", report.dump());
  CHECK(code_of([&] { cmd_report(c); }) == ErrorCode::numerical);
}

TEST_CASE("medical report lists sites and bound checks") {
  gen::TempDir dir("exp_medical_report");
  const ExperimentConfig c = parse_config(medical_doc(dir.path));
  cmd_gen(c);
  cmd_train(c);
  const Json report = read_json_file(run_dir(c) / "report.json");
  CHECK(schema::validate(report, load_schema()) == "");
  CHECK(report["metrics"]["sites"].size() == 2);
  CHECK(report["ece_bound"].size() == 2);
  CHECK(report["risk_bound"].is_null());
  cmd_report(c);
  const CsvTable bounds = parse_csv(read_file(run_dir(c) / "bounds.csv"));
  REQUIRE(bounds.size() == 3);
  CHECK(bounds[1][0] == "ece_cmp_brier");
}

TEST_CASE("schema validator catches violations") {
  const Json s = load_schema();
  gen::TempDir dir("exp_schema");
  const ExperimentConfig c = parse_config(vision_doc(dir.path));
  const Json good = report_json(run_training(c, generate_dataset(c), c.train), c);
  REQUIRE(schema::validate(good, s) == "");
  Json bad = good;
  bad["extra"] = 1;
  CHECK(schema::validate(bad, s) != "");
  bad = good;
  bad["calibration"]["bins"][0]["count"] = -1;
  CHECK(schema::validate(bad, s) != "");
  bad = good;
  bad.erase("domain");
  CHECK(schema::validate(bad, s) != "");
}

TEST_CASE("sweep summaries re-parse") {
  gen::TempDir dir("exp_sweep");
  const ExperimentConfig c = parse_config(vision_doc(dir.path));
  cmd_gen(c);
  cmd_sweep(c, 2);
  const std::string text = read_file(sweep_dir(c) / "summary.csv");
  const auto rows = parse_summary_csv(text);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].lambda1 == 0.0);
  CHECK(rows[1].lambda1 == 0.5);
  CHECK(rows[2].lambda2 == 0.4);
  for (const auto& r : rows) CHECK(r.ok);
  CHECK(summary_csv(Task::vision, rows) == text);
  const Json js = read_json_file(sweep_dir(c) / "summary.json");
  REQUIRE(js["points"].size() == 3);
  CHECK(schema::validate(js["points"][2]["report"], load_schema()) == "");
  CHECK(js["points"][2]["report"]["train"]["lambda2"] == 0.4);
}

TEST_CASE("failed sweep rows keep their error text") {
  std::vector<SummaryRow> rows(2);
  rows[0].ok = true;
  rows[0].hd95 = 3.5;
  rows[0].primary = 0.8;
  rows[1].lambda2 = 0.5;
  rows[1].error = "training diverged";
  const std::string text = summary_csv(Task::medical, rows);
  CHECK(parse_summary_csv(text) == rows);
}

TEST_CASE("medical sweep") {
  gen::TempDir dir("exp_med_sweep");
  const ExperimentConfig c = parse_config(medical_doc(dir.path));
  cmd_gen(c);
  cmd_sweep(c, 1);
  const auto rows = parse_summary_csv(read_file(sweep_dir(c) / "summary.csv"));
  CHECK(rows.size() == 2);
  CHECK_FALSE(fs::exists(sweep_dir(c) / "summary.json"));
}

TEST_CASE("pipeline output is byte-identical across runs") {
  gen::TempDir a("exp_det_a"), b("exp_det_b");
  // Same relative out dir in both so the echoed configs match.
  const fs::path cwd = fs::current_path();
  for (gen::TempDir* d : {&a, &b}) {
    fs::current_path(d->path);
    const ExperimentConfig c = parse_config(vision_doc("out"));
    cmd_gen(c);
    cmd_train(c);
    cmd_report(c);
  }
  fs::current_path(cwd);
  for (const char* f : {"run/report.json", "run/metrics.csv", "run/params.ckpt", "run/reliability.csv",
                        "run/bounds.csv", "run/bounds.json", "dataset/manifest.json"})
    CHECK(read_file(a.path / "out" / f) == read_file(b.path / "out" / f));
}
