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

#include "starfm/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "starfm/error.hpp"

namespace starfm {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kInitStream = 0x494E4954ULL;

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng::stream(seed ^ kShuffleStream, epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

void check_finite(double loss, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(loss))
    fail(ErrorCode::numerical, "training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step));
}

void check_finite(std::span<const double> theta, std::size_t epoch, std::size_t step) {
  for (double v : theta)
    if (!std::isfinite(v))
      fail(ErrorCode::numerical, "training diverged: non-finite parameters at epoch " + std::to_string(epoch) +
                                     ", step " + std::to_string(step));
}

std::vector<ProbVector> predict(const Model& model, const SampleBatch& batch) {
  std::vector<ProbVector> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.push_back(ProbVector{forward_classifier(model, batch.row(i))});
  }
  return out;
}

}  // namespace

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  fail(ErrorCode::configuration, "unknown optimizer '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    fail(ErrorCode::configuration, "learning_rate must be >= 0");
  if (batch_size < 1) fail(ErrorCode::configuration, "batch_size must be >= 1");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) fail(ErrorCode::configuration, "lambda values must be >= 0");
  if (eval_every < 1) fail(ErrorCode::configuration, "eval_every must be >= 1");
  if (num_bins < 1) fail(ErrorCode::configuration, "bins must be >= 1");
  if (patches.edge < 1 || patches.stride < 1) fail(ErrorCode::configuration, "patch edge/stride must be >= 1");
}

void Sgd::step(std::span<double> theta, std::span<const double> grad) {
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr_ * grad[i];
}

void Adam::step(std::span<double> theta, std::span<const double> grad) {
  if (m_.empty()) {
    m_.assign(theta.size(), 0.0);
    v_.assign(theta.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    const double mh = m_[i] / c1, vh = v_[i] / c2;
    theta[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::sgd) return std::make_unique<Sgd>(cfg.learning_rate);
  return std::make_unique<Adam>(cfg.learning_rate);
}

std::uint64_t init_seed(std::uint64_t run_seed) { return splitmix64_mix(run_seed ^ kInitStream); }

VisionMetrics evaluate_vision(const Model& model, const ShiftedDataset& data, std::size_t num_bins) {
  VisionMetrics m;
  const auto ps = predict(model, data.source);
  const auto pt = predict(model, data.target);
  m.acc_src = accuracy(ps, data.source.labels);
  m.acc_tgt = accuracy(pt, data.target.labels);
  m.cal_src = ece_classifier(ps, data.source.labels, num_bins);
  m.cal_tgt = ece_classifier(pt, data.target.labels, num_bins);
  m.brier_src = brier(ps, data.source.labels);
  m.brier_tgt = brier(pt, data.target.labels);
  return m;
}

RunReport train_vision(Model& model, const ShiftedDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  require(data.source.size() > 0, "train: empty source split");
  RunReport rep;
  rep.task = "vision";
  rep.model = model.kind();
  rep.config = cfg;
  auto opt = make_optimizer(cfg);
  auto& theta = model.params().values;
  const std::size_t n = data.source.size();
  const bool pairs = model.kind() == ModelKind::two_tower;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(n, cfg.seed, epoch);
    const auto tgt_order = cfg.fisher_on_target ? shuffled(data.target.size(), cfg.seed, epoch + (1ULL << 32))
                                                : std::vector<std::size_t>{};
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      if (pairs && end - start < 2) continue;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const SampleBatch batch = data.source.subset(idx);
      SampleBatch fisher_batch;
      ObjectiveConfig oc{cfg.lambda1, cfg.lambda2, nullptr};
      if (cfg.fisher_on_target && cfg.lambda1 > 0.0) {
        std::vector<std::size_t> tidx;
        for (std::size_t k = 0; k < idx.size(); ++k) tidx.push_back(tgt_order[(start + k) % tgt_order.size()]);
        fisher_batch = data.target.subset(tidx);
        oc.fisher_batch = &fisher_batch;
      }
      const LossValue lv = loss_vision(model, theta, batch, oc);
      check_finite(lv.total, epoch, step);
      opt->step(theta, lv.grad);
      check_finite(theta, epoch, step);
      loss_sum += lv.total;
      ++batches;
      ++step;
    }
    rep.loss_curve.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      const auto pt = predict(model, data.target);
      rep.eval_curve.push_back({epoch + 1, accuracy(pt, data.target.labels),
                                ece_classifier(pt, data.target.labels, cfg.num_bins).ece});
    }
  }
  VisionMetrics vm = evaluate_vision(model, data, cfg.num_bins);
  rep.calibration = vm.cal_tgt;
  rep.domain.dgg = dgg(vm.acc_src, vm.acc_tgt);
  const double accs[2] = {vm.acc_src, vm.acc_tgt};
  rep.domain.cross_site_std = cross_site_variance(accs);
  rep.vision = std::move(vm);
  rep.risk_bound = eval_risk_bound(model, model.params(), data);
  rep.final_params = model.params();
  return rep;
}

RunReport train_medical(Model& model, const SyntheticVolumeSet& data, const TrainConfig& cfg) {
  cfg.validate();
  require(model.classes() == 2, "train: segmentation needs a binary model");
  require(!data.sites.empty() && !data.sites[0].empty(), "train: no source volumes");
  RunReport rep;
  rep.task = "medical";
  rep.model = model.kind();
  rep.config = cfg;

  const auto& src = data.sites[0];
  const std::size_t n_train = src.size() > 1 ? src.size() - 1 : 1;
  std::vector<SegmentationBatch> train;
  for (std::size_t v = 0; v < n_train; ++v) train.push_back(make_volume_batch(src[v].image, src[v].mask, cfg.patches));

  auto opt = make_optimizer(cfg);
  auto& theta = model.params().values;
  std::size_t step = 0;
  auto evaluate_sites = [&](bool full) {
    std::vector<SiteMetrics> out;
    for (std::size_t s = 0; s < data.sites.size(); ++s) {
      const VolumeSample& ev = data.sites[s].back();
      const ProbVolume probs = forward_segmenter(model, ev.image);
      SiteMetrics sm;
      sm.site = s;
      sm.seg = full ? seg_report(probs, ev.mask, cfg.num_bins) : SegReport{};
      if (!full) sm.seg.dsc = dsc(threshold(probs), ev.mask);
      const MaskVolume pred = threshold(probs);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) hits += (pred[i] != 0) == (ev.mask[i] != 0);
      sm.voxel_accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
      if (full) sm.ece_bound = eval_ece_bound(probs, ev.mask, cfg.num_bins);
      out.push_back(std::move(sm));
    }
    return out;
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(train.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t k : order) {
      const LossValue lv = loss_medical(model, theta, train[k], ObjectiveConfig{cfg.lambda1, cfg.lambda2, nullptr});
      check_finite(lv.total, epoch, step);
      opt->step(theta, lv.grad);
      check_finite(theta, epoch, step);
      loss_sum += lv.total;
      ++step;
    }
    rep.loss_curve.push_back(loss_sum / static_cast<double>(train.size()));
    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      const auto sites = evaluate_sites(false);
      double d = 0.0;
      std::size_t cnt = 0;
      for (std::size_t s = sites.size() > 1 ? 1 : 0; s < sites.size(); ++s, ++cnt) d += sites[s].seg.dsc;
      rep.eval_curve.push_back({epoch + 1, d / static_cast<double>(cnt), 0.0});
    }
  }

  rep.sites = evaluate_sites(true);
  // Pooled calibration over the target sites (site 0 when it is the only one).
  std::vector<double> conf;
  std::vector<std::uint8_t> ok;
  const std::size_t first_target = data.sites.size() > 1 ? 1 : 0;
  for (std::size_t s = first_target; s < data.sites.size(); ++s) {
    const VolumeSample& ev = data.sites[s].back();
    const ProbVolume probs = forward_segmenter(model, ev.image);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const bool pred = probs[i] >= 0.5;
      conf.push_back(pred ? probs[i] : 1.0 - probs[i]);
      ok.push_back(pred == (ev.mask[i] != 0));
    }
  }
  rep.calibration = ece(conf, ok, cfg.num_bins);
  if (!rep.eval_curve.empty()) rep.eval_curve.back().target_ece = rep.calibration.ece;

  double tgt_acc = 0.0;
  for (std::size_t s = first_target; s < rep.sites.size(); ++s) tgt_acc += rep.sites[s].voxel_accuracy;
  tgt_acc /= static_cast<double>(rep.sites.size() - first_target);
  rep.domain.dgg = dgg(rep.sites[0].voxel_accuracy, tgt_acc);
  if (rep.sites.size() >= 2) {
    std::vector<double> d;
    for (const auto& s : rep.sites) d.push_back(s.seg.dsc);
    rep.domain.cross_site_std = cross_site_variance(d);
  }
  rep.final_params = model.params();
  return rep;
}

void SweepGrid::validate() const {
  auto ok = [](const std::vector<double>& v) {
    if (v.empty()) return false;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!(v[i] >= 0.0) || !std::isfinite(v[i])) return false;
      if (i > 0 && !(v[i] > v[i - 1])) return false;
    }
    return true;
  };
  if (!ok(lambda1_values) || !ok(lambda2_values))
    fail(ErrorCode::configuration, "sweep grid values must be nonempty, nonnegative and strictly ascending");
}

std::vector<std::pair<double, double>> SweepGrid::points() const {
  std::vector<std::pair<double, double>> pts;
  auto add = [&pts](double a, double b) {
    for (const auto& p : pts)
      if (p.first == a && p.second == b) return;
    pts.emplace_back(a, b);
  };
  if (mode == SweepMode::full_grid) {
    for (double a : lambda1_values)
      for (double b : lambda2_values) add(a, b);
  } else {
    for (double a : lambda1_values) add(a, 0.0);
    for (double b : lambda2_values) add(0.0, b);
  }
  return pts;
}

std::vector<SweepPoint> sweep(const RunFn& run, const SweepGrid& grid, const TrainConfig& base, std::size_t jobs) {
  grid.validate();
  const auto pts = grid.points();
  std::vector<SweepPoint> out(pts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < pts.size(); i = next++) {
      TrainConfig cfg = base;
      cfg.lambda1 = pts[i].first;
      cfg.lambda2 = pts[i].second;
      out[i].lambda1 = cfg.lambda1;
      out[i].lambda2 = cfg.lambda2;
      try {
        out[i].report = run(cfg);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, pts.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return out;
}

}  // namespace starfm
