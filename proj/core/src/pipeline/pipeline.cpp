// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <set>

#include <json.hpp>

#include "gplq/nd/kernels.hpp"
#include "gplq/nd/rng.hpp"
#include "gplq/quant/observer.hpp"
#include "gplq/qwt/compensation.hpp"
#include "gplq/vit/forward.hpp"
#include "gplq/vit/train.hpp"

#ifndef GPLQ_VERSION
#define GPLQ_VERSION "0.0.0"
#endif

namespace gplq::pipeline {

using nd::Tensor;

namespace {

// Independent random streams under the master seed.
enum Stream : std::uint64_t {
  kTaskA = 1,
  kTaskB = 2,
  kInit = 3,
  kTeacherShuffle = 4,
  kActCalib = 5,
  kActObserver = 6,
  kPcaSubset = 7,
  kStage1Shuffle = 8,
  kStage2Calib = 9,
  kProbeShuffle = 10,
};

std::uint64_t stream(const PipelineConfig& cfg, Stream s) { return nd::derive_seed(cfg.seed, s); }

constexpr std::size_t kEvalChunk = 256;
constexpr std::size_t kTapChunk = 64;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Runs fn(images, first) over `indices` in chunks.
template <typename Fn>
void for_chunks(const data::Dataset& ds, std::span<const std::size_t> indices, std::size_t chunk,
                Fn&& fn) {
  for (std::size_t first = 0; first < indices.size(); first += chunk) {
    const std::size_t n = std::min(chunk, indices.size() - first);
    fn(ds.gather(indices.subspan(first, n)), first);
  }
}

std::vector<std::size_t> all_indices(const data::Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

Tensor features_of(const vit::Model& model, const vit::QuantHooks* hooks, const data::Dataset& ds,
                   std::span<const std::size_t> indices) {
  const std::size_t d = model.config().embed_dim;
  Tensor out({indices.size(), d});
  for_chunks(ds, indices, kEvalChunk, [&](const Tensor& images, std::size_t first) {
    const auto r = vit::forward(model, images, hooks);
    std::copy(r.features.values().begin(), r.features.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(first * d));
  });
  return out;
}

std::size_t argmax_row(const Tensor& logits, std::size_t r) {
  const auto row = logits.row(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

bool is_decayed(const std::string& name) { return name.ends_with(".weight"); }

struct LossTerms {
  double total = 0.0;
  Tensor logits_grad;
  std::optional<Tensor> feature_grad;
};

LossTerms stage_loss(const vit::ForwardResult& student, std::span<const int> labels,
                     const Tensor* teacher_features, const mimic::PcaSubspace* pca,
                     const Stage1Config& s1) {
  LossTerms t;
  const bool use_ce = s1.loss_mode != LossMode::pca_only;
  const bool use_pca = s1.loss_mode != LossMode::ce_only && pca != nullptr;
  auto ce = vit::cross_entropy(student.logits, labels);
  if (use_ce) {
    t.total += ce.loss;
    t.logits_grad = std::move(ce.grad);
  } else {
    t.logits_grad = Tensor(student.logits.shape());
  }
  if (use_pca) {
    auto lp = mimic::loss_pca(student.features, *teacher_features, *pca);
    const double w = s1.loss_mode == LossMode::pca_only ? 1.0 : s1.pca_weight;
    t.total += w * lp.loss;
    t.feature_grad = nd::scale(lp.grad_student, w);
  }
  return t;
}

struct QatOptions {
  bool train_weight_scales = false;
};

// Shared one-run QAT loop for stage 1 and the direct baseline.
StageReport train_quantized(vit::Model& student, vit::QuantHooks& hooks, const vit::Model& teacher,
                            const mimic::PcaSubspace* pca, const PipelineConfig& cfg,
                            const Datasets& data, QatOptions opt, const std::string& stage) {
  const Stage1Config& s1 = cfg.stage1;
  StageReport report;
  report.stage = stage;
  vit::AdamW params_opt({s1.lr, 0.9, 0.999, 1e-8, s1.weight_decay});
  vit::AdamW scale_opt({s1.lr, 0.9, 0.999, 1e-8, 0.0});
  data::BatchIterator it(data.train_a, s1.batch_size, stream(cfg, kStage1Shuffle));
  const std::size_t per_epoch = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(s1.data_fraction * it.batches_per_epoch())));
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < s1.epochs; ++epoch) {
    data::Batch batch;
    for (std::size_t i = 0; i < per_epoch && it.next(batch); ++i) {
      std::optional<Tensor> t_feat;
      if (pca != nullptr && s1.loss_mode != LossMode::ce_only) {
        t_feat = vit::forward(teacher, batch.images).features;
      }
      auto fwd = vit::forward(student, batch.images, &hooks, true);
      auto loss = stage_loss(fwd, batch.labels, t_feat ? &*t_feat : nullptr, pca, s1);
      if (!std::isfinite(loss.total)) {
        throw NumericError(stage + ": non-finite loss at step " + std::to_string(steps));
      }
      report.loss_curve.push_back(loss.total);
      auto grads = vit::backward(*fwd.tape, loss.logits_grad,
                                 loss.feature_grad ? &*loss.feature_grad : nullptr);
      if (s1.train_weights) {
        for (auto& [name, p] : student.params()) {
          params_opt.step(name, p, grads.params.at(name), is_decayed(name));
        }
      }
      for (auto& [site, g] : grads.act_scales) {
        auto& q = hooks.activations.at(site);
        scale_opt.step("act:" + site, q.state.scale, g, false);
        quant::project_scale(q.state);
      }
      if (opt.train_weight_scales) {
        for (auto& [layer, g] : grads.weight_scales) {
          auto& q = hooks.weights.at(layer);
          scale_opt.step("weight:" + layer, q.state.scale, g, false);
          quant::project_scale(q.state);
        }
      }
      ++steps;
    }
    // Restart at the next epoch boundary when a fraction was used.
    while (it.epoch() == epoch) {
      data::Batch skip;
      if (!it.next(skip)) break;
    }
  }
  const auto& curve = report.loss_curve;
  report.metrics["steps"] = static_cast<double>(steps);
  if (!curve.empty()) {
    const double peak = *std::max_element(curve.begin(), curve.end());
    report.metrics["initial_loss"] = curve.front();
    report.metrics["final_loss"] = curve.back();
    report.metrics["peak_loss"] = peak;
    report.metrics["peak_ratio"] = peak / curve.front();
    report.metrics["guard_passed"] = peak <= s1.guard_ratio * curve.front() ? 1.0 : 0.0;
  }
  return report;
}

double relative_error(const Tensor& w, const Tensor& wq) {
  const double n = nd::frobenius_norm(w);
  return n > 0.0 ? nd::frobenius_norm(nd::sub(w, wq)) / n : 0.0;
}

nlohmann::json stage_json(const StageReport& s) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, v] : s.metrics) metrics[k] = v;
  nlohmann::json errors = nlohmann::json::object();
  for (const auto& [k, v] : s.layer_errors) errors[k] = v;
  return {{"stage", s.stage}, {"metrics", metrics}, {"loss_curve", s.loss_curve},
          {"layer_errors", errors}};
}

}  // namespace

const StageReport& RunReport::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.stage == name) return s;
  }
  throw PreconditionError("report has no stage '" + name + "'");
}

std::string RunReport::to_json() const {
  nlohmann::json j = {{"config_hash", config_hash}, {"seed", seed}, {"provenance", provenance}};
  j["stages"] = nlohmann::json::array();
  for (const auto& s : stages) j["stages"].push_back(stage_json(s));
  return j.dump(2) + "\n";
}

std::string RunReport::timings_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : stages) j[s.stage] = s.wall_clock_s;
  return j.dump(2) + "\n";
}

std::string provenance(const PipelineConfig& cfg) {
  return std::string("gplq ") + GPLQ_VERSION + " config=" + config_hash(cfg) +
         " seed=" + std::to_string(cfg.seed);
}

Datasets make_datasets(const PipelineConfig& cfg) {
  cfg.validate();
  auto spec_a = cfg.task_a;
  auto spec_b = cfg.task_b;
  spec_a.seed = stream(cfg, kTaskA);
  spec_b.seed = stream(cfg, kTaskB);
  auto a = data::generate(spec_a);
  auto b = data::generate(spec_b);
  Datasets d;
  d.train_a = std::make_shared<const data::Dataset>(std::move(a.train));
  d.val_a = std::make_shared<const data::Dataset>(std::move(a.val));
  d.train_b = std::make_shared<const data::Dataset>(std::move(b.train));
  d.val_b = std::make_shared<const data::Dataset>(std::move(b.val));
  return d;
}

double evaluate(const vit::Model& model, const vit::QuantHooks* hooks, const data::Dataset& ds) {
  if (ds.size() == 0) throw PreconditionError("cannot evaluate on an empty dataset");
  const auto idx = all_indices(ds);
  std::size_t correct = 0;
  for_chunks(ds, idx, kEvalChunk, [&](const Tensor& images, std::size_t first) {
    const auto r = vit::forward(model, images, hooks);
    for (std::size_t i = 0; i < r.logits.rows(); ++i) {
      if (static_cast<int>(argmax_row(r.logits, i)) == ds.labels[first + i]) ++correct;
    }
  });
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

TeacherResult train_fp32_teacher(const PipelineConfig& cfg, const Datasets& data) {
  Stopwatch clock;
  const TeacherConfig& tc = cfg.teacher;
  TeacherResult out{vit::Model::initialize(cfg.model, stream(cfg, kInit)), {}};
  out.report.stage = "teacher";
  vit::AdamW opt({tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay});
  data::BatchIterator it(data.train_a, tc.batch_size, stream(cfg, kTeacherShuffle));
  const std::size_t total = tc.epochs * it.batches_per_epoch();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    data::Batch batch;
    double sum = 0.0;
    std::size_t n = 0;
    while (it.next(batch)) {
      if (tc.cosine_schedule) {
        const double t = static_cast<double>(step) / static_cast<double>(total);
        opt.set_lr(tc.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
      }
      auto fwd = vit::forward(out.model, batch.images, nullptr, true);
      auto ce = vit::cross_entropy(fwd.logits, batch.labels);
      if (!std::isfinite(ce.loss)) {
        throw NumericError("teacher training diverged at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step));
      }
      auto grads = vit::backward(*fwd.tape, ce.grad);
      for (auto& [name, p] : out.model.params()) {
        opt.step(name, p, grads.params.at(name), is_decayed(name));
      }
      sum += ce.loss;
      ++n;
      ++step;
    }
    out.report.loss_curve.push_back(n ? sum / static_cast<double>(n) : 0.0);
  }
  out.report.metrics["epochs"] = static_cast<double>(tc.epochs);
  out.report.metrics["accuracy"] = evaluate(out.model, nullptr, *data.val_a);
  out.report.wall_clock_s = clock.seconds();
  return out;
}

vit::QuantHooks calibrate_activations(const vit::Model& model, const PipelineConfig& cfg,
                                      const Datasets& data,
                                      std::optional<quant::ObserverKind> observer) {
  const auto sites = activation_sites(cfg);
  std::map<std::string, quant::Observer> observers;
  const std::uint64_t obs_seed = stream(cfg, kActObserver);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const std::uint64_t seed = nd::derive_seed(obs_seed, i);
    observers.emplace(sites[i], observer ? quant::Observer(*observer, cfg.act.quantizer, seed)
                                         : quant::make_observer(cfg.act.quantizer, seed));
  }
  const auto idx =
      data::sample_indices(data.train_a->size(), cfg.stage1.calib_samples, stream(cfg, kActCalib));
  if (idx.empty()) throw PreconditionError("activation calibration needs at least one sample");
  vit::ForwardOptions opts;
  opts.site_tap = [&](const std::string& site, std::span<const double> v, std::size_t rows,
                      std::size_t cols) {
    if (auto it = observers.find(site); it != observers.end()) it->second.observe(v, rows, cols);
  };
  for_chunks(*data.train_a, idx, kTapChunk,
             [&](const Tensor& images, std::size_t) { vit::forward(model, images, opts); });
  vit::QuantHooks hooks;
  for (const auto& [site, obs] : observers) {
    hooks.activations.emplace(site,
                              quant::Quantizer{cfg.act.quantizer, quant::init_scale(obs, cfg.act.quantizer)});
  }
  return hooks;
}

std::map<std::string, quant::Quantizer> quantize_weights(const vit::Model& model,
                                                         const WeightQuantConfig& wq,
                                                         const std::vector<std::string>& layers) {
  std::map<std::string, quant::Quantizer> out;
  for (const auto& layer : layers) {
    quant::Observer obs(wq.observer, wq.quantizer);
    obs.observe(model.param(layer + ".weight"));
    out.emplace(layer, quant::Quantizer{wq.quantizer, quant::init_scale(obs, wq.quantizer)});
  }
  return out;
}

ActQatResult run_act_qat(const vit::Model& teacher, const PipelineConfig& cfg,
                         const Datasets& data) {
  Stopwatch clock;
  cfg.validate();
  ActQatResult out{{teacher, calibrate_activations(teacher, cfg, data)}, std::nullopt, {}};
  const double calibrated = evaluate(out.w32a4.model, &out.w32a4.hooks, *data.val_a);

  if (cfg.stage1.loss_mode != LossMode::ce_only) {
    const auto idx = data::sample_indices(data.train_a->size(), cfg.stage1.pca.fit_samples,
                                          stream(cfg, kPcaSubset));
    mimic::PcaOptions po;
    po.target_variance = cfg.stage1.pca.target_variance;
    po.round_multiple = cfg.stage1.pca.round_multiple;
    po.force_components = cfg.stage1.pca.force_components;
    out.pca = mimic::fit_pca(features_of(teacher, nullptr, *data.train_a, idx), po);
  }

  out.report = train_quantized(out.w32a4.model, out.w32a4.hooks, teacher,
                               out.pca ? &*out.pca : nullptr, cfg, data, {}, "act_qat");
  for (auto& [site, q] : out.w32a4.hooks.activations) q.state.frozen = true;

  auto& m = out.report.metrics;
  m["calibrated_accuracy"] = calibrated;
  m["accuracy"] = evaluate(out.w32a4.model, &out.w32a4.hooks, *data.val_a);
  m["latent_accuracy"] = evaluate(out.w32a4.model, nullptr, *data.val_a);
  m["pca_components"] = out.pca ? static_cast<double>(out.pca->k()) : 0.0;
  m["pca_explained"] = out.pca ? out.pca->cumulative_explained : 0.0;
  out.report.wall_clock_s = clock.seconds();
  return out;
}

WeightPtqResult run_weight_ptq(const QuantModel& w32a4, const PipelineConfig& cfg,
                               const Datasets& data) {
  Stopwatch clock;
  cfg.validate();
  if (w32a4.hooks.activations.empty()) {
    throw PreconditionError("weight PTQ expects an activation-quantized model; none of its sites are quantized");
  }
  for (const auto& [site, q] : w32a4.hooks.activations) {
    if (!q.state.frozen) {
      throw PreconditionError("weight PTQ needs frozen activation quantizers; '" + site +
                              "' is still trainable");
    }
  }
  const auto& s2 = cfg.stage2;
  const auto layers = weight_layers(cfg);
  const std::set<std::string> excluded(s2.qwt_exclude.begin(), s2.qwt_exclude.end());
  const auto idx =
      data::sample_indices(data.train_a->size(), s2.calib_samples, stream(cfg, kStage2Calib));
  if (s2.qwt_enabled && idx.empty()) {
    throw PreconditionError("compensation needs at least one calibration sample");
  }

  WeightPtqResult out{w32a4, {}};
  out.report.stage = "weight_ptq";
  const vit::Model& model = w32a4.model;

  // Layer outputs of the W32A4 reference network on the calibration set,
  // in tap order (sample-major).
  std::map<std::string, std::vector<double>> reference;
  if (s2.qwt_enabled) {
    for (const auto& l : layers) {
      if (!excluded.count(l)) reference[l];
    }
    vit::ForwardOptions opts;
    opts.hooks = &w32a4.hooks;
    opts.layer_tap = [&](const std::string& layer, std::span<const double>,
                         std::span<const double> output, std::size_t) {
      if (auto it = reference.find(layer); it != reference.end()) {
        it->second.insert(it->second.end(), output.begin(), output.end());
      }
    };
    for_chunks(*data.train_a, idx, kTapChunk,
               [&](const Tensor& images, std::size_t) { vit::forward(model, images, opts); });
  }

  for (const auto& layer : layers) {
    out.w4a4.hooks.weights.insert_or_assign(
        layer, quantize_weights(model, cfg.weight, {layer}).at(layer));
    const Tensor& w = model.param(layer + ".weight");
    out.report.layer_errors[layer] =
        relative_error(w, vit::effective_weight(model, &out.w4a4.hooks, layer));
    if (!s2.qwt_enabled || excluded.count(layer)) continue;

    const std::size_t d_out = w.dim(0);
    const std::size_t d_in = w.dim(1);
    const auto& ref = reference.at(layer);
    qwt::CompensationAccumulator acc(d_in, d_out, s2.augment_bias);
    std::size_t offset = 0;
    std::vector<double> residual;
    vit::ForwardOptions opts;
    opts.hooks = &out.w4a4.hooks;
    opts.layer_tap = [&](const std::string& name, std::span<const double> input,
                         std::span<const double> output, std::size_t rows) {
      if (name != layer) return;
      residual.resize(rows * d_out);
      for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = ref[offset + i] - output[i];
      offset += residual.size();
      acc.add(input, residual, rows);
    };
    for_chunks(*data.train_a, idx, kTapChunk,
               [&](const Tensor& images, std::size_t) { vit::forward(model, images, opts); });
    try {
      out.w4a4.hooks.compensations.insert_or_assign(layer, acc.solve(s2.lambda_rel, layer));
    } catch (const Error& e) {
      throw PipelineError("compensation solve failed for layer '" + layer + "': " + e.what());
    }
  }

  auto& m = out.report.metrics;
  m["w32a4_accuracy"] = evaluate(model, &w32a4.hooks, *data.val_a);
  vit::QuantHooks plain = out.w4a4.hooks;
  plain.compensations.clear();
  m["accuracy_no_qwt"] = evaluate(model, &plain, *data.val_a);
  m["accuracy"] = s2.qwt_enabled ? evaluate(model, &out.w4a4.hooks, *data.val_a)
                                 : m["accuracy_no_qwt"];
  m["compensated_layers"] = static_cast<double>(out.w4a4.hooks.compensations.size());
  m["calib_samples"] = static_cast<double>(idx.size());
  out.report.wall_clock_s = clock.seconds();
  return out;
}

DirectQatResult run_direct_qat(const vit::Model& teacher, const PipelineConfig& cfg,
                               const Datasets& data) {
  Stopwatch clock;
  cfg.validate();
  DirectQatResult out{{teacher, calibrate_activations(teacher, cfg, data)}, {}};
  out.w4a4.hooks.weights = quantize_weights(teacher, cfg.weight, weight_layers(cfg));
  std::optional<mimic::PcaSubspace> pca;
  if (cfg.stage1.loss_mode != LossMode::ce_only) {
    const auto idx = data::sample_indices(data.train_a->size(), cfg.stage1.pca.fit_samples,
                                          stream(cfg, kPcaSubset));
    mimic::PcaOptions po;
    po.target_variance = cfg.stage1.pca.target_variance;
    po.round_multiple = cfg.stage1.pca.round_multiple;
    po.force_components = cfg.stage1.pca.force_components;
    pca = mimic::fit_pca(features_of(teacher, nullptr, *data.train_a, idx), po);
  }
  out.report = train_quantized(out.w4a4.model, out.w4a4.hooks, teacher, pca ? &*pca : nullptr,
                               cfg, data, {.train_weight_scales = true}, "direct_qat");
  for (auto& [site, q] : out.w4a4.hooks.activations) q.state.frozen = true;
  for (auto& [layer, q] : out.w4a4.hooks.weights) q.state.frozen = true;
  auto& m = out.report.metrics;
  m["accuracy"] = evaluate(out.w4a4.model, &out.w4a4.hooks, *data.val_a);
  m["latent_accuracy"] = evaluate(out.w4a4.model, nullptr, *data.val_a);
  out.report.wall_clock_s = clock.seconds();
  return out;
}

vit::Model extract_latent_fp32(const QuantModel& model) { return model.model; }

double linear_probe(const vit::Model& model, const vit::QuantHooks* hooks,
                    const PipelineConfig& cfg, const Datasets& data) {
  const auto& train = *data.train_b;
  const auto& val = *data.val_b;
  const Tensor ftr = features_of(model, hooks, train, all_indices(train));
  const Tensor fva = features_of(model, hooks, val, all_indices(val));
  const std::size_t d = ftr.cols();
  const std::size_t k = train.num_classes;
  const std::size_t bs = cfg.probe.batch_size;

  Tensor w({k, d});
  Tensor b({k});
  vit::AdamW opt({cfg.probe.lr, 0.9, 0.999, 1e-8, 0.0});
  std::vector<std::size_t> order = all_indices(train);
  Tensor xb({bs, d});
  Tensor logits({bs, k});
  std::vector<int> yb(bs);
  for (std::size_t epoch = 0; epoch < cfg.probe.epochs; ++epoch) {
    nd::Rng rng(nd::derive_seed(stream(cfg, kProbeShuffle), epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }
    for (std::size_t first = 0; first + bs <= order.size(); first += bs) {
      for (std::size_t r = 0; r < bs; ++r) {
        const auto src = ftr.row(order[first + r]);
        std::copy(src.begin(), src.end(), xb.row(r).begin());
        yb[r] = train.labels[order[first + r]];
      }
      nd::kernels::gemm_nt(xb.values(), w.values(), logits.values(), bs, d, k, false);
      for (std::size_t r = 0; r < bs; ++r) {
        for (std::size_t c = 0; c < k; ++c) logits(r, c) += b[c];
      }
      const auto ce = vit::cross_entropy(logits, yb);
      Tensor gw({k, d});
      nd::kernels::gemm_tn(ce.grad.values(), xb.values(), gw.values(), k, bs, d, false);
      Tensor gb({k});
      for (std::size_t r = 0; r < bs; ++r) {
        for (std::size_t c = 0; c < k; ++c) gb[c] += ce.grad(r, c);
      }
      opt.step("w", w, gw, false);
      opt.step("b", b, gb, false);
    }
  }

  std::size_t correct = 0;
  std::vector<double> row(k);
  for (std::size_t i = 0; i < val.size(); ++i) {
    nd::kernels::gemm_nt(fva.row(i), w.values(), row, 1, d, k, false);
    for (std::size_t c = 0; c < k; ++c) row[c] += b[c];
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == val.labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(val.size());
}

GplqResult run_gplq(const vit::Model& teacher, const PipelineConfig& cfg, const Datasets& data) {
  GplqResult r{run_act_qat(teacher, cfg, data), {}};
  r.stage2 = run_weight_ptq(r.stage1.w32a4, cfg, data);
  r.acc_w32a4 = r.stage1.report.metrics.at("accuracy");
  r.acc_latent = r.stage1.report.metrics.at("latent_accuracy");
  r.acc_w4a4_no_qwt = r.stage2.report.metrics.at("accuracy_no_qwt");
  r.acc_w4a4 = r.stage2.report.metrics.at("accuracy");
  Stopwatch clock;
  r.probe = linear_probe(r.stage2.w4a4.model, &r.stage2.w4a4.hooks, cfg, data);
  r.stage2.report.metrics["probe_accuracy"] = r.probe;
  r.stage2.report.wall_clock_s += clock.seconds();
  return r;
}

}  // namespace gplq::pipeline
