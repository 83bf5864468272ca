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

#include "starfm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "starfm/error.hpp"

namespace starfm {

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& why) {
  fail(ErrorCode::configuration, "config: '" + path + "' " + why);
}

// Reads keys of one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_.empty() ? "<root>" : path_, "must be an object");
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) config_error(key(it.key()), "is not a recognised key");
  }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }
  const Json& at(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }
  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  double number(const std::string& k, double def) {
    if (!has(k)) return def;
    const Json& v = at(k);
    if (!v.is_number() || !std::isfinite(v.get<double>())) config_error(key(k), "must be a finite number");
    return v.get<double>();
  }
  std::uint64_t count(const std::string& k, std::uint64_t def) {
    if (!has(k)) return def;
    const Json& v = at(k);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) config_error(key(k), "must be a nonnegative integer");
    return v.get<std::uint64_t>();
  }
  bool flag(const std::string& k, bool def) {
    if (!has(k)) return def;
    const Json& v = at(k);
    if (!v.is_boolean()) config_error(key(k), "must be true or false");
    return v.get<bool>();
  }
  std::string text(const std::string& k, const std::string& def) {
    if (!has(k)) return def;
    const Json& v = at(k);
    if (!v.is_string()) config_error(key(k), "must be a string");
    return v.get<std::string>();
  }
  std::vector<double> numbers(const std::string& k, std::vector<double> def) {
    if (!has(k)) return def;
    const Json& v = at(k);
    if (!v.is_array()) config_error(key(k), "must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) config_error(key(k), "must be an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto parse_enum(const std::string& path, const std::string& value, F f) {
  try {
    return f(value);
  } catch (const Error&) {
    config_error(path, "has unknown value \"" + value + "\"");
  }
}

void parse_model(Section& root, ExperimentConfig& c) {
  if (!root.has("model")) return;
  Section s(root.at("model"), "model");
  if (s.has("kind")) c.model.kind = parse_enum("model.kind", s.text("kind", ""), model_kind_from_string);
  c.model.hidden = s.count("hidden", c.model.hidden);
  c.model.temperature = s.number("temperature", c.model.temperature);
  if (!(c.model.temperature > 0.0)) config_error("model.temperature", "must be > 0");
  s.finish();
}

void parse_shift(Section& root, ExperimentConfig& c) {
  if (!root.has("shift")) return;
  Section s(root.at("shift"), "shift");
  ShiftSpec& sp = c.shift;
  if (s.has("kind")) sp.kind = parse_enum("shift.kind", s.text("kind", ""), shift_kind_from_string);
  sp.magnitude = s.number("magnitude", sp.magnitude);
  sp.n_src = s.count("n_src", sp.n_src);
  sp.n_tgt = s.count("n_tgt", sp.n_tgt);
  sp.classes = s.count("classes", sp.classes);
  sp.dim = s.count("dim", sp.dim);
  sp.label_noise = s.number("label_noise", sp.label_noise);
  s.finish();
}

void parse_volumes(Section& root, ExperimentConfig& c) {
  if (!root.has("volumes")) return;
  Section s(root.at("volumes"), "volumes");
  c.volumes.sites = s.count("sites", c.volumes.sites);
  c.volumes.per_site = s.count("per_site", c.volumes.per_site);
  c.volumes.edge = s.count("edge", c.volumes.edge);
  if (c.volumes.sites < 1) config_error("volumes.sites", "must be >= 1");
  if (c.volumes.per_site < 1) config_error("volumes.per_site", "must be >= 1");
  if (c.volumes.edge < 16) config_error("volumes.edge", "must be >= 16");
  s.finish();
}

void parse_train(Section& root, ExperimentConfig& c) {
  if (!root.has("train")) return;
  Section s(root.at("train"), "train");
  TrainConfig& t = c.train;
  if (s.has("optimizer")) t.optimizer = parse_enum("train.optimizer", s.text("optimizer", ""), optimizer_from_string);
  t.learning_rate = s.number("learning_rate", t.learning_rate);
  t.batch_size = s.count("batch_size", t.batch_size);
  t.epochs = s.count("epochs", t.epochs);
  t.lambda1 = s.number("lambda1", t.lambda1);
  t.lambda2 = s.number("lambda2", t.lambda2);
  t.eval_every = s.count("eval_every", t.eval_every);
  t.fisher_on_target = s.flag("fisher_on_target", t.fisher_on_target);
  t.patches.edge = s.count("patch_edge", t.patches.edge);
  t.patches.stride = s.count("patch_stride", t.patches.stride);
  s.finish();
}

void parse_sweep(Section& root, ExperimentConfig& c) {
  if (!root.has("sweep")) return;
  Section s(root.at("sweep"), "sweep");
  SweepGrid g;
  g.lambda1_values = s.numbers("lambda1", g.lambda1_values);
  g.lambda2_values = s.numbers("lambda2", g.lambda2_values);
  const std::string mode = s.text("mode", "one_axis");
  if (mode == "one_axis")
    g.mode = SweepMode::one_axis;
  else if (mode == "full_grid")
    g.mode = SweepMode::full_grid;
  else
    config_error("sweep.mode", "has unknown value \"" + mode + "\"");
  s.finish();
  c.sweep = g;
}

void parse_output(Section& root, ExperimentConfig& c) {
  if (!root.has("output")) return;
  Section s(root.at("output"), "output");
  c.out_dir = s.text("dir", c.out_dir);
  if (c.out_dir.empty()) config_error("output.dir", "must not be empty");
  if (s.has("formats")) {
    const Json& f = s.at("formats");
    if (!f.is_array() || f.empty()) config_error("output.formats", "must be a nonempty array");
    c.formats.clear();
    for (const auto& e : f) {
      if (!e.is_string() || (e != "json" && e != "csv")) config_error("output.formats", "entries must be \"json\" or \"csv\"");
      c.formats.push_back(e.get<std::string>());
    }
  }
  s.finish();
}

bool wants(const ExperimentConfig& c, const char* fmt) {
  return std::find(c.formats.begin(), c.formats.end(), fmt) != c.formats.end();
}

Json density_json(const IsoGaussian& g) { return {{"mean", g.mean}, {"scale", g.scale}}; }

Json shift_json(const ShiftSpec& s) {
  return {{"kind", std::string(to_string(s.kind))},
          {"magnitude", s.magnitude},
          {"n_src", s.n_src},
          {"n_tgt", s.n_tgt},
          {"classes", s.classes},
          {"dim", s.dim},
          {"seed", s.seed},
          {"label_noise", s.label_noise}};
}

// Header field access for dataset files; errors name the field.
struct Header {
  const Json& j;
  std::string file;

  const Json& field(const std::string& k) const {
    if (!j.is_object() || !j.contains(k)) fail(ErrorCode::invalid_input, file + ": field '" + k + "' is missing");
    return j.at(k);
  }
  [[noreturn]] void bad(const std::string& k, const std::string& why) const {
    fail(ErrorCode::invalid_input, file + ": field '" + k + "' " + why);
  }
  std::uint64_t count(const std::string& k, std::uint64_t min = 0) const {
    const Json& v = field(k);
    if (!v.is_number_integer() || v.get<std::int64_t>() < static_cast<std::int64_t>(min))
      bad(k, "must be an integer >= " + std::to_string(min));
    return v.get<std::uint64_t>();
  }
  double number(const std::string& k) const {
    const Json& v = field(k);
    if (!v.is_number() || !std::isfinite(v.get<double>())) bad(k, "must be a finite number");
    return v.get<double>();
  }
  std::string text(const std::string& k) const {
    const Json& v = field(k);
    if (!v.is_string()) bad(k, "must be a string");
    return v.get<std::string>();
  }
  std::vector<double> numbers(const std::string& k, std::size_t n) const {
    const Json& v = field(k);
    if (!v.is_array() || v.size() != n) bad(k, "must be an array of " + std::to_string(n) + " numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) bad(k, "must be an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
};

IsoGaussian parse_density(const Header& h, const std::string& k, std::size_t dim) {
  Header d{h.field(k), h.file + ": " + k};
  IsoGaussian g;
  g.mean = d.numbers("mean", dim);
  g.scale = d.number("scale");
  if (!(g.scale > 0.0)) d.bad("scale", "must be > 0");
  return g;
}

std::string sample_csv(const SampleBatch& b, const std::vector<double>& uniforms, const std::vector<double>* weights) {
  CsvTable rows;
  std::vector<std::string> head;
  for (std::size_t j = 0; j < b.dim; ++j) head.push_back("x" + std::to_string(j));
  head.push_back("label");
  head.push_back("uniform");
  if (weights) head.push_back("weight");
  rows.push_back(head);
  for (std::size_t i = 0; i < b.size(); ++i) {
    std::vector<std::string> r;
    for (double v : b.row(i)) r.push_back(format_double(v));
    r.push_back(std::to_string(b.labels[i]));
    r.push_back(format_double(uniforms[i]));
    if (weights) r.push_back(format_double((*weights)[i]));
    rows.push_back(std::move(r));
  }
  return to_csv(rows);
}

double parse_number(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    fail(ErrorCode::invalid_input, where + ": bad number \"" + s + "\"");
  return v;
}

void read_samples(const fs::path& path, std::size_t dim, std::size_t n, std::size_t classes, bool with_weights,
                  SampleBatch& out, std::vector<double>& uniforms, std::vector<double>* weights) {
  if (!fs::exists(path)) fail(ErrorCode::invalid_input, "dataset file not found: " + path.string());
  const CsvTable t = parse_csv(read_file(path));
  const std::size_t cols = dim + 2 + (with_weights ? 1 : 0);
  const std::string name = path.filename().string();
  if (t.size() != n + 1) fail(ErrorCode::invalid_input, name + ": expected " + std::to_string(n) + " rows");
  out.dim = dim;
  out.features.resize(n * dim);
  out.labels.resize(n);
  uniforms.resize(n);
  if (weights) weights->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = t[i + 1];
    const std::string where = name + " row " + std::to_string(i + 1);
    if (r.size() != cols) fail(ErrorCode::invalid_input, where + ": expected " + std::to_string(cols) + " columns");
    for (std::size_t j = 0; j < dim; ++j) out.features[i * dim + j] = parse_number(r[j], where);
    const double lab = parse_number(r[dim], where);
    if (lab != std::floor(lab) || lab < 0 || lab >= static_cast<double>(classes))
      fail(ErrorCode::invalid_input, where + ": label out of range");
    out.labels[i] = static_cast<int>(lab);
    uniforms[i] = parse_number(r[dim + 1], where);
    if (weights) (*weights)[i] = parse_number(r[dim + 2], where);
  }
}

std::string volume_stem(std::size_t site, std::size_t v, const char* what) {
  return "site" + std::to_string(site) + "_vol" + std::to_string(v) + "_" + what;
}

Json calibration_json(const CalibrationReport& c) {
  Json bins = Json::array();
  const double B = static_cast<double>(c.num_bins);
  for (std::size_t b = 0; b < c.bins.size(); ++b) {
    bins.push_back({{"lo", static_cast<double>(b) / B},
                    {"hi", static_cast<double>(b + 1) / B},
                    {"count", c.bins[b].count},
                    {"mean_confidence", c.bins[b].mean_confidence},
                    {"accuracy", c.bins[b].accuracy}});
  }
  return {{"ece", c.ece}, {"brier", c.brier}, {"n", c.n}, {"num_bins", c.num_bins}, {"bins", bins}};
}

Json ece_bound_json(const EceBoundReport& e) {
  return {{"ece_measured", e.ece_measured}, {"cmp_3d", e.cmp_3d}, {"n", e.n},
          {"brier", e.brier},               {"bound_value", e.bound_value}, {"holds", e.holds}};
}

Json risk_bound_json(const RiskBoundReport& r) {
  return {{"risk_src", r.risk_src},
          {"risk_tgt", r.risk_tgt},
          {"se_src", r.se_src},
          {"se_tgt", r.se_tgt},
          {"fisher_trace", r.fisher_trace},
          {"shift_cov_trace", r.shift_cov_trace},
          {"fisher_shift_product", r.fisher_shift_product},
          {"product_mode", r.product_mode},
          {"bound_value", r.bound_value},
          {"bound_value_c0", r.bound_value_c0},
          {"slack", r.slack},
          {"kl_src_tgt", r.kl_src_tgt},
          {"iw_risk", r.iw_risk},
          {"iw_risk_se", r.iw_risk_se},
          {"mean_weight", r.mean_weight},
          {"mean_weight_se", r.mean_weight_se},
          {"cov_term", r.cov_term},
          {"cauchy_schwarz_bound", r.cauchy_schwarz_bound},
          {"holds", r.risk_tgt <= r.bound_value},
          {"n", r.n}};
}

std::string csv_field(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

std::string opt_number(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

std::string_view to_string(Task t) { return t == Task::vision ? "vision" : "medical"; }

ModelDims ExperimentConfig::model_dims() const {
  if (task == Task::medical) return {kStencilFeatures, model.hidden, 2};
  return {shift.dim, model.hidden, shift.classes};
}

ExperimentConfig parse_config(const Json& doc) {
  ExperimentConfig c;
  c.echo = doc;
  {
    Section root(doc, "");
    const std::string task = root.text("task", "vision");
    if (task == "vision")
      c.task = Task::vision;
    else if (task == "medical")
      c.task = Task::medical;
    else
      config_error("task", "must be \"vision\" or \"medical\"");
    c.seed = root.count("seed", 0);
    if (c.task == Task::medical) c.model.kind = ModelKind::voxel_linear;
    parse_model(root, c);
    parse_shift(root, c);
    parse_volumes(root, c);
    parse_train(root, c);
    parse_sweep(root, c);
    parse_output(root, c);
    c.train.num_bins = root.count("bins", c.train.num_bins);
    root.finish();
  }
  c.shift.seed = c.seed;
  c.train.seed = c.seed;
  try {
    c.train.validate();
    if (c.sweep) c.sweep->validate();
  } catch (const Error& e) {
    fail(ErrorCode::configuration, std::string("config: ") + e.what());
  }
  if (c.task == Task::vision) {
    if (c.shift.classes < 2) config_error("shift.classes", "must be >= 2");
    if (c.shift.dim < 1) config_error("shift.dim", "must be >= 1");
    if (c.shift.n_src < 1 || c.shift.n_tgt < 1) config_error("shift.n_src", "and n_tgt must be >= 1");
    if (c.model.kind == ModelKind::voxel_linear) config_error("model.kind", "voxel_linear needs task \"medical\"");
  } else if (c.model.kind == ModelKind::two_tower) {
    config_error("model.kind", "two_tower needs task \"vision\"");
  }
  if ((c.model.kind == ModelKind::mlp1 || c.model.kind == ModelKind::two_tower) && c.model.hidden < 1)
    config_error("model.hidden", "must be >= 1");
  return c;
}

Json apply_overrides(Json doc, const Overrides& o) {
  if (!doc.is_object()) config_error("<root>", "must be an object");
  if (o.seed) doc["seed"] = *o.seed;
  if (o.out_dir) {
    if (!doc.contains("output")) doc["output"] = Json::object();
    doc["output"]["dir"] = *o.out_dir;
  }
  if (o.format) {
    if (*o.format != "json" && *o.format != "csv") fail(ErrorCode::usage, "--format must be json or csv");
    if (!doc.contains("output")) doc["output"] = Json::object();
    doc["output"]["formats"] = Json::array({*o.format});
  }
  return doc;
}

Dataset generate_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  d.task = cfg.task;
  if (cfg.task == Task::vision)
    d.vision = gen_classification(cfg.shift);
  else
    d.volumes = gen_volumes(cfg.volumes.sites, cfg.volumes.per_site, cfg.volumes.edge, cfg.seed);
  return d;
}

Json write_dataset(const fs::path& dir, const Dataset& data) {
  std::vector<std::string> files;
  Json head;
  head["version"] = 1;
  if (data.task == Task::vision) {
    const ShiftedDataset& ds = *data.vision;
    head["format"] = "starfm.vision";
    head["spec"] = shift_json(ds.spec);
    head["rule"] = {{"classes", ds.rule.classes}, {"dim", ds.rule.dim}, {"noise", ds.rule.noise},
                    {"prototypes", ds.rule.prototypes}};
    head["source_density"] = density_json(ds.source_density);
    head["target_density"] = density_json(ds.target_density);
    head["source_file"] = "source.csv";
    head["target_file"] = "target.csv";
    write_file_atomic(dir / "source.csv", sample_csv(ds.source, ds.source_uniforms, &ds.importance_weights));
    write_file_atomic(dir / "target.csv", sample_csv(ds.target, ds.target_uniforms, nullptr));
    files = {"source.csv", "target.csv"};
  } else {
    const SyntheticVolumeSet& vs = *data.volumes;
    head["format"] = "starfm.volumes";
    head["sites"] = vs.sites.size();
    head["per_site"] = vs.sites.empty() ? 0 : vs.sites[0].size();
    Json sp = Json::array();
    for (const auto& p : vs.site_params) sp.push_back({{"gain", p.gain}, {"offset", p.offset}, {"noise", p.noise}});
    head["site_params"] = sp;
    Json vols = Json::array();
    for (std::size_t s = 0; s < vs.sites.size(); ++s) {
      for (std::size_t v = 0; v < vs.sites[s].size(); ++v) {
        const std::string img = volume_stem(s, v, "image"), msk = volume_stem(s, v, "mask");
        for (auto& f : write_volume(dir / img, vs.sites[s][v].image)) files.push_back(f);
        for (auto& f : write_volume(dir / msk, vs.sites[s][v].mask)) files.push_back(f);
        vols.push_back({{"site", s}, {"index", v}, {"image", img}, {"mask", msk}});
      }
    }
    head["volumes"] = vols;
  }
  const std::string head_text = canonical_json(head) + "\n";
  write_file_atomic(dir / "dataset.json", head_text);
  files.push_back("dataset.json");
  std::sort(files.begin(), files.end());

  Json entries = Json::array();
  for (const auto& f : files) {
    const std::string bytes = read_file(dir / f);
    entries.push_back({{"path", f}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
  }
  Json manifest = {{"version", 1}, {"files", entries}};
  write_file_atomic(dir / "manifest.json", canonical_json(manifest) + "\n");
  return manifest;
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path hp = dir / "dataset.json";
  if (!fs::exists(hp)) fail(ErrorCode::invalid_input, "dataset not found: " + hp.string() + " (run gen first)");
  const Json j = read_json_file(hp);
  const Header h{j, "dataset.json"};
  if (h.count("version") != 1) h.bad("version", "must be 1");
  const std::string format = h.text("format");
  Dataset d;
  if (format == "starfm.vision") {
    d.task = Task::vision;
    ShiftedDataset ds;
    const Header sh{h.field("spec"), "dataset.json: spec"};
    ds.spec.kind = [&] {
      try {
        return shift_kind_from_string(sh.text("kind"));
      } catch (const Error&) {
        sh.bad("kind", "has an unknown value");
      }
    }();
    ds.spec.magnitude = sh.number("magnitude");
    ds.spec.n_src = sh.count("n_src", 1);
    ds.spec.n_tgt = sh.count("n_tgt", 1);
    ds.spec.classes = sh.count("classes", 2);
    ds.spec.dim = sh.count("dim", 1);
    ds.spec.seed = sh.count("seed");
    ds.spec.label_noise = sh.number("label_noise");
    const Header rh{h.field("rule"), "dataset.json: rule"};
    ds.rule.classes = rh.count("classes", 2);
    ds.rule.dim = rh.count("dim", 1);
    if (ds.rule.classes != ds.spec.classes) rh.bad("classes", "disagrees with spec");
    if (ds.rule.dim != ds.spec.dim) rh.bad("dim", "disagrees with spec");
    ds.rule.noise = rh.number("noise");
    ds.rule.prototypes = rh.numbers("prototypes", ds.spec.classes * ds.spec.dim);
    ds.source_density = parse_density(h, "source_density", ds.spec.dim);
    ds.target_density = parse_density(h, "target_density", ds.spec.dim);
    read_samples(dir / h.text("source_file"), ds.spec.dim, ds.spec.n_src, ds.spec.classes, true, ds.source,
                 ds.source_uniforms, &ds.importance_weights);
    read_samples(dir / h.text("target_file"), ds.spec.dim, ds.spec.n_tgt, ds.spec.classes, false, ds.target,
                 ds.target_uniforms, nullptr);
    d.vision = std::move(ds);
  } else if (format == "starfm.volumes") {
    d.task = Task::medical;
    SyntheticVolumeSet vs;
    const std::size_t sites = h.count("sites", 1), per_site = h.count("per_site", 1);
    const Json& sp = h.field("site_params");
    if (!sp.is_array() || sp.size() != sites) h.bad("site_params", "must list one entry per site");
    for (const auto& p : sp) {
      const Header ph{p, "dataset.json: site_params"};
      vs.site_params.push_back({ph.number("gain"), ph.number("offset"), ph.number("noise")});
    }
    const Json& vols = h.field("volumes");
    if (!vols.is_array() || vols.size() != sites * per_site) h.bad("volumes", "must list sites*per_site entries");
    vs.sites.assign(sites, std::vector<VolumeSample>(per_site));
    std::vector<std::uint8_t> filled(sites * per_site, 0);
    for (const auto& v : vols) {
      const Header vh{v, "dataset.json: volumes"};
      const std::size_t s = vh.count("site"), i = vh.count("index");
      if (s >= sites) vh.bad("site", "out of range");
      if (i >= per_site) vh.bad("index", "out of range");
      if (filled[s * per_site + i]++) vh.bad("index", "is duplicated");
      vs.sites[s][i].image = read_volume(dir / vh.text("image"));
      vs.sites[s][i].mask = read_mask(dir / vh.text("mask"));
      if (!(vs.sites[s][i].image.dims == vs.sites[s][i].mask.dims)) vh.bad("mask", "shape differs from image");
    }
    d.volumes = std::move(vs);
  } else {
    h.bad("format", "has unknown value \"" + format + "\"");
  }

  // Checksums last so that header problems are reported by field name.
  const fs::path mp = dir / "manifest.json";
  if (!fs::exists(mp)) fail(ErrorCode::invalid_input, "dataset manifest not found: " + mp.string());
  const Json m = read_json_file(mp);
  const Header mh{m, "manifest.json"};
  const Json& entries = mh.field("files");
  if (!entries.is_array()) mh.bad("files", "must be an array");
  for (const auto& e : entries) {
    const Header eh{e, "manifest.json: files"};
    const std::string path = eh.text("path");
    if (!fs::exists(dir / path)) fail(ErrorCode::invalid_input, "dataset file listed in manifest is missing: " + path);
    if (sha256_hex(read_file(dir / path)) != eh.text("sha256"))
      fail(ErrorCode::invalid_input, "dataset file " + path + " does not match its manifest checksum");
  }
  return d;
}

RunReport run_training(const ExperimentConfig& cfg, const Dataset& data, const TrainConfig& train) {
  if (data.task != cfg.task)
    fail(ErrorCode::invalid_input, "dataset task is " + std::string(to_string(data.task)) + ", config task is " +
                                       std::string(to_string(cfg.task)));
  ModelDims dims = cfg.model_dims();
  if (cfg.task == Task::vision) {
    const auto& spec = data.vision->spec;
    if (spec.dim != dims.input || spec.classes != dims.classes)
      fail(ErrorCode::invalid_input, "dataset dim/classes disagree with the config's shift section");
  }
  Model model = Model::create(cfg.model.kind, dims, init_seed(train.seed), cfg.model.temperature);
  if (cfg.task == Task::vision) return train_vision(model, *data.vision, train);
  return train_medical(model, *data.volumes, train);
}

Json report_json(const RunReport& r, const ExperimentConfig& cfg) {
  Json j;
  j["schema"] = "starfm.run_report/1";
  j["task"] = r.task;
  j["seed"] = r.config.seed;
  j["config"] = cfg.echo;
  const ModelDims dims = cfg.model_dims();
  j["model"] = {{"kind", std::string(to_string(r.model))},
                {"input", dims.input},
                {"hidden", dims.hidden},
                {"classes", dims.classes},
                {"temperature", cfg.model.temperature},
                {"param_count", r.final_params.size()}};
  j["train"] = {{"optimizer", std::string(to_string(r.config.optimizer))},
                {"learning_rate", r.config.learning_rate},
                {"batch_size", r.config.batch_size},
                {"epochs", r.config.epochs},
                {"lambda1", r.config.lambda1},
                {"lambda2", r.config.lambda2},
                {"num_bins", r.config.num_bins}};
  j["loss_curve"] = r.loss_curve;
  Json ev = Json::array();
  for (const auto& e : r.eval_curve)
    ev.push_back({{"epoch", e.epoch}, {"target_metric", e.target_metric}, {"target_ece", e.target_ece}});
  j["eval_curve"] = ev;
  Json metrics;
  if (r.vision) {
    const VisionMetrics& v = *r.vision;
    metrics = {{"acc_src", v.acc_src},           {"acc_tgt", v.acc_tgt},     {"ece_src", v.cal_src.ece},
               {"ece_tgt", v.cal_tgt.ece},       {"brier_src", v.brier_src}, {"brier_tgt", v.brier_tgt}};
    j["ece_bound"] = nullptr;
  } else {
    Json sites = Json::array();
    Json bounds = Json::array();
    for (const auto& s : r.sites) {
      sites.push_back({{"site", s.site},
                       {"dsc", s.seg.dsc},
                       {"hd95", s.seg.hd95 ? Json(*s.seg.hd95) : Json(nullptr)},
                       {"ece_voxel", s.seg.ece_voxel},
                       {"cmp_3d", s.seg.cmp_3d},
                       {"voxel_accuracy", s.voxel_accuracy}});
      Json b = ece_bound_json(s.ece_bound);
      b["site"] = s.site;
      bounds.push_back(b);
    }
    metrics = {{"sites", sites}};
    j["ece_bound"] = bounds;
  }
  j["metrics"] = metrics;
  j["calibration"] = calibration_json(r.calibration);
  j["domain"] = {{"dgg", r.domain.dgg}, {"cross_site_std", r.domain.cross_site_std}};
  j["risk_bound"] = r.risk_bound ? risk_bound_json(*r.risk_bound) : Json(nullptr);
  return j;
}

std::string metrics_csv(const RunReport& r) {
  CsvTable t{{"epoch", "loss", "target_metric", "target_ece"}};
  for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
    std::vector<std::string> row{std::to_string(e + 1), format_double(r.loss_curve[e]), "", ""};
    for (const auto& p : r.eval_curve) {
      if (p.epoch == e + 1) {
        row[2] = format_double(p.target_metric);
        row[3] = format_double(p.target_ece);
      }
    }
    t.push_back(std::move(row));
  }
  return to_csv(t);
}

std::vector<SummaryRow> summarize(Task task, const std::vector<SweepPoint>& points) {
  std::vector<SummaryRow> out;
  for (const auto& p : points) {
    SummaryRow row;
    row.lambda1 = p.lambda1;
    row.lambda2 = p.lambda2;
    row.ok = p.report.has_value();
    row.error = p.error;
    if (p.report) {
      const RunReport& r = *p.report;
      row.ece = r.calibration.ece;
      row.dgg = r.domain.dgg;
      if (task == Task::vision) {
        row.primary = r.vision->acc_tgt;
      } else {
        const std::size_t first = r.sites.size() > 1 ? 1 : 0;
        double d = 0.0, h = 0.0;
        std::size_t nh = 0;
        for (std::size_t s = first; s < r.sites.size(); ++s) {
          d += r.sites[s].seg.dsc;
          if (r.sites[s].seg.hd95) {
            h += *r.sites[s].seg.hd95;
            ++nh;
          }
        }
        row.primary = d / static_cast<double>(r.sites.size() - first);
        if (nh) row.hd95 = h / static_cast<double>(nh);
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::string summary_csv(Task task, const std::vector<SummaryRow>& rows) {
  const bool med = task == Task::medical;
  CsvTable t;
  if (med)
    t.push_back({"lambda1", "lambda2", "status", "dsc", "ece", "hd95", "dgg", "error"});
  else
    t.push_back({"lambda1", "lambda2", "status", "accuracy", "ece", "dgg", "error"});
  for (const auto& r : rows) {
    std::vector<std::string> row{format_double(r.lambda1), format_double(r.lambda2), r.ok ? "ok" : "failed"};
    row.push_back(r.ok ? format_double(r.primary) : "");
    row.push_back(r.ok ? format_double(r.ece) : "");
    if (med) row.push_back(r.ok ? opt_number(r.hd95) : "");
    row.push_back(r.ok ? format_double(r.dgg) : "");
    row.push_back(csv_field(r.error));
    t.push_back(std::move(row));
  }
  return to_csv(t);
}

std::vector<SummaryRow> parse_summary_csv(std::string_view text) {
  const CsvTable t = parse_csv(text);
  if (t.empty()) fail(ErrorCode::invalid_input, "summary csv: missing header");
  const bool med = t[0].size() == 8;
  if (!med && t[0].size() != 7) fail(ErrorCode::invalid_input, "summary csv: unexpected header");
  std::vector<SummaryRow> out;
  for (std::size_t i = 1; i < t.size(); ++i) {
    const auto& r = t[i];
    const std::string where = "summary csv row " + std::to_string(i);
    if (r.size() != t[0].size()) fail(ErrorCode::invalid_input, where + ": wrong column count");
    SummaryRow s;
    s.lambda1 = parse_number(r[0], where);
    s.lambda2 = parse_number(r[1], where);
    s.ok = r[2] == "ok";
    std::size_t c = 3;
    if (s.ok) {
      s.primary = parse_number(r[c++], where);
      s.ece = parse_number(r[c++], where);
      if (med) {
        if (!r[c].empty()) s.hd95 = parse_number(r[c], where);
        ++c;
      }
      s.dgg = parse_number(r[c++], where);
    } else {
      c += med ? 4 : 3;
    }
    s.error = r[c];
    out.push_back(std::move(s));
  }
  return out;
}

std::string reliability_csv(const Json& report) {
  const Header h{report, "report.json"};
  const Header cal{h.field("calibration"), "report.json: calibration"};
  const Json& bins = cal.field("bins");
  if (!bins.is_array()) cal.bad("bins", "must be an array");
  CsvTable t{{"bin", "lo", "hi", "mean_confidence", "accuracy", "count"}};
  std::size_t i = 0;
  for (const auto& b : bins) {
    const Header bh{b, "report.json: calibration.bins"};
    t.push_back({std::to_string(i++), format_double(bh.number("lo")), format_double(bh.number("hi")),
                 format_double(bh.number("mean_confidence")), format_double(bh.number("accuracy")),
                 std::to_string(bh.count("count"))});
  }
  return to_csv(t);
}

double ece_from_report(const Json& report) {
  const Header h{report, "report.json"};
  const Header cal{h.field("calibration"), "report.json: calibration"};
  CalibrationReport c;
  c.n = cal.count("n");
  c.num_bins = cal.count("num_bins", 1);
  for (const auto& b : cal.field("bins")) {
    const Header bh{b, "report.json: calibration.bins"};
    c.bins.push_back({bh.count("count"), bh.number("mean_confidence"), bh.number("accuracy")});
  }
  return ece_from_bins(c);
}

std::string bounds_summary(const Json& report, bool as_json) {
  const Header h{report, "report.json"};
  Json rows = Json::array();
  const Json& rb = h.field("risk_bound");
  if (!rb.is_null()) {
    const Header b{rb, "report.json: risk_bound"};
    rows.push_back({{"bound", "risk_shift"},
                    {"site", nullptr},
                    {"measured", b.number("risk_tgt")},
                    {"bound_value", b.number("bound_value")},
                    {"holds", b.field("holds").get<bool>()}});
  }
  const Json& eb = h.field("ece_bound");
  if (!eb.is_null()) {
    if (!eb.is_array()) h.bad("ece_bound", "must be an array or null");
    for (const auto& e : eb) {
      const Header b{e, "report.json: ece_bound"};
      rows.push_back({{"bound", "ece_cmp_brier"},
                      {"site", b.count("site")},
                      {"measured", b.number("ece_measured")},
                      {"bound_value", b.number("bound_value")},
                      {"holds", b.field("holds").get<bool>()}});
    }
  }
  if (as_json) return canonical_json(Json{{"bounds", rows}}) + "\n";
  CsvTable t{{"bound", "site", "measured", "bound_value", "holds"}};
  for (const auto& r : rows)
    t.push_back({r["bound"].get<std::string>(), r["site"].is_null() ? "" : std::to_string(r["site"].get<std::size_t>()),
                 format_double(r["measured"].get<double>()), format_double(r["bound_value"].get<double>()),
                 r["holds"].get<bool>() ? "true" : "false"});
  return to_csv(t);
}

fs::path dataset_dir(const ExperimentConfig& cfg) { return fs::path(cfg.out_dir) / "dataset"; }
fs::path run_dir(const ExperimentConfig& cfg) { return fs::path(cfg.out_dir) / "run"; }
fs::path sweep_dir(const ExperimentConfig& cfg) { return fs::path(cfg.out_dir) / "sweep"; }

void cmd_gen(const ExperimentConfig& cfg) { write_dataset(dataset_dir(cfg), generate_dataset(cfg)); }

void cmd_train(const ExperimentConfig& cfg) {
  const Dataset data = read_dataset(dataset_dir(cfg));
  const RunReport r = run_training(cfg, data, cfg.train);
  const fs::path dir = run_dir(cfg);
  write_file_atomic(dir / "report.json", canonical_json(report_json(r, cfg)) + "\n");
  write_file_atomic(dir / "metrics.csv", metrics_csv(r));
  const Model m = Model::from_params(cfg.model.kind, cfg.model_dims(), r.final_params, cfg.model.temperature);
  save_checkpoint(dir / "params.ckpt", m);
}

void cmd_sweep(const ExperimentConfig& cfg, std::size_t jobs) {
  const Dataset data = read_dataset(dataset_dir(cfg));
  const SweepGrid grid = cfg.sweep.value_or(SweepGrid{});
  const auto points = sweep([&](const TrainConfig& t) { return run_training(cfg, data, t); }, grid, cfg.train, jobs);
  const auto rows = summarize(cfg.task, points);
  const fs::path dir = sweep_dir(cfg);
  if (wants(cfg, "csv")) write_file_atomic(dir / "summary.csv", summary_csv(cfg.task, rows));
  if (wants(cfg, "json")) {
    Json arr = Json::array();
    for (std::size_t i = 0; i < points.size(); ++i) {
      Json e = {{"lambda1", rows[i].lambda1}, {"lambda2", rows[i].lambda2}, {"ok", rows[i].ok}, {"error", rows[i].error}};
      e["report"] = points[i].report ? report_json(*points[i].report, cfg) : Json(nullptr);
      arr.push_back(std::move(e));
    }
    write_file_atomic(dir / "summary.json", canonical_json(Json{{"points", arr}}) + "\n");
  }
}

void cmd_report(const ExperimentConfig& cfg) {
  const fs::path dir = run_dir(cfg);
  const fs::path rp = dir / "report.json";
  if (!fs::exists(rp)) fail(ErrorCode::invalid_input, "run report not found: " + rp.string() + " (run train first)");
  const Json report = read_json_file(rp);
  const double recomposed = ece_from_report(report);
  const double stored = Header{report.at("calibration"), "report.json: calibration"}.number("ece");
  if (!(std::fabs(recomposed - stored) <= 1e-12))
    fail(ErrorCode::numerical, "report: ECE recomposed from bins differs from the stored value");
  write_file_atomic(dir / "reliability.csv", reliability_csv(report));
  if (wants(cfg, "csv")) write_file_atomic(dir / "bounds.csv", bounds_summary(report, false));
  if (wants(cfg, "json")) write_file_atomic(dir / "bounds.json", bounds_summary(report, true));
}

}  // namespace starfm
