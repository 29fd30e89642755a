// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/pipeline/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <set>

namespace gplq::pipeline {

std::string Table::to_csv() const {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += ',';
      s += cells[i];
    }
    return s + "\n";
  };
  std::string out = line(columns);
  for (const auto& r : rows) out += line(r);
  return out;
}

Session::Session(PipelineConfig cfg) : cfg_(std::move(cfg)), data_(make_datasets(cfg_)) {}

const TeacherResult& Session::teacher() {
  if (!teacher_) teacher_ = train_fp32_teacher(cfg_, data_);
  return *teacher_;
}

void Session::set_teacher(vit::Model model, StageReport report) {
  if (!(model.config() == cfg_.model)) throw PreconditionError("teacher does not match model config");
  if (report.stage.empty()) report.stage = "teacher";
  if (!report.metrics.count("accuracy")) {
    report.metrics["accuracy"] = evaluate(model, nullptr, *data_.val_a);
  }
  teacher_ = TeacherResult{std::move(model), std::move(report)};
  gplq_.clear();
  direct_.clear();
  direct_probe_.clear();
}

void Session::check_variant(const PipelineConfig& v) const {
  if (!(v.model == cfg_.model) || v.seed != cfg_.seed || !(v.teacher == cfg_.teacher) ||
      to_json(PipelineConfig{.task_a = v.task_a, .task_b = v.task_b}) !=
          to_json(PipelineConfig{.task_a = cfg_.task_a, .task_b = cfg_.task_b})) {
    throw PreconditionError("config variant changes the model, data, teacher or seed");
  }
}

const GplqResult& Session::gplq(const PipelineConfig& variant) {
  check_variant(variant);
  auto& slot = gplq_[to_json(variant)];
  if (!slot) slot = std::make_unique<GplqResult>(run_gplq(teacher().model, variant, data_));
  return *slot;
}

const DirectQatResult& Session::direct(const PipelineConfig& variant) {
  check_variant(variant);
  auto& slot = direct_[to_json(variant)];
  if (!slot) slot = std::make_unique<DirectQatResult>(run_direct_qat(teacher().model, variant, data_));
  return *slot;
}

double Session::direct_probe(const PipelineConfig& variant) {
  const std::string key = to_json(variant);
  if (auto it = direct_probe_.find(key); it != direct_probe_.end()) return it->second;
  const auto& d = direct(variant);
  const double acc = linear_probe(d.w4a4.model, &d.w4a4.hooks, variant, data_);
  direct_probe_[key] = acc;
  return acc;
}

namespace {

std::string fmt(double v, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

StageReport renamed(StageReport s, const std::string& prefix) {
  s.stage = prefix + "/" + s.stage;
  return s;
}

RunReport base_report(const Session& s) {
  RunReport r;
  r.config_hash = config_hash(s.config());
  r.seed = s.config().seed;
  r.provenance = provenance(s.config());
  return r;
}

void add_gplq(RunReport& r, const GplqResult& g, const std::string& prefix) {
  r.stages.push_back(renamed(g.stage1.report, prefix));
  r.stages.push_back(renamed(g.stage2.report, prefix));
}

ExperimentResult sensitivity(Session& s) {
  const auto& cfg = s.config();
  const auto& teacher = s.teacher();
  const double fp32 = teacher.report.metrics.at("accuracy");
  // Both sides use percentile-range calibration here, whatever the stage defaults.
  WeightQuantConfig wq = cfg.weight;
  wq.observer = quant::ObserverKind::percentile;
  vit::QuantHooks w_only;
  w_only.weights = quantize_weights(teacher.model, wq, weight_layers(cfg));
  const vit::QuantHooks a_only =
      calibrate_activations(teacher.model, cfg, s.data(), quant::ObserverKind::percentile);
  const double w4a32 = evaluate(teacher.model, &w_only, *s.data().val_a);
  const double w32a4 = evaluate(teacher.model, &a_only, *s.data().val_a);

  ExperimentResult out;
  out.table = {"sensitivity", {"setting", "accuracy", "drop"},
               {{"W4A32", fmt(w4a32), fmt(fp32 - w4a32)}, {"W32A4", fmt(w32a4), fmt(fp32 - w32a4)}}};
  out.metrics = {{"fp32", fp32},
                 {"w4a32", w4a32},
                 {"w32a4", w32a4},
                 {"drop_w4a32", fp32 - w4a32},
                 {"drop_w32a4", fp32 - w32a4}};
  out.report = base_report(s);
  out.report.stages.push_back(teacher.report);
  StageReport st;
  st.stage = "sensitivity";
  st.metrics = out.metrics;
  out.report.stages.push_back(st);
  return out;
}

ExperimentResult granularity(Session& s) {
  ExperimentResult out;
  out.table = {"granularity", {"granularity", "w32a4_accuracy", "w4a4_accuracy"}, {}};
  out.report = base_report(s);
  for (auto g : {quant::Granularity::per_tensor, quant::Granularity::per_token,
                 quant::Granularity::per_channel}) {
    PipelineConfig v = s.config();
    v.act.quantizer.granularity = g;
    const auto& r = s.gplq(v);
    const std::string name(quant::to_string(g));
    out.table.rows.push_back({name, fmt(r.acc_w32a4), fmt(r.acc_w4a4)});
    out.metrics[name + ".w32a4"] = r.acc_w32a4;
    out.metrics[name + ".w4a4"] = r.acc_w4a4;
    add_gplq(out.report, r, name);
  }
  return out;
}

ExperimentResult components(Session& s) {
  const auto& r = s.gplq();
  ExperimentResult out;
  out.table = {"components",
               {"method", "accuracy"},
               {{"W32A4 act-QAT", fmt(r.acc_w32a4)},
                {"W4A4 weight PTQ", fmt(r.acc_w4a4_no_qwt)},
                {"W4A4 weight PTQ + QwT", fmt(r.acc_w4a4)}}};
  out.metrics = {{"w32a4", r.acc_w32a4}, {"w4a4_no_qwt", r.acc_w4a4_no_qwt}, {"w4a4_qwt", r.acc_w4a4}};
  out.report = base_report(s);
  add_gplq(out.report, r, "gplq");
  return out;
}

ExperimentResult basin(Session& s) {
  const double fp32 = s.teacher().report.metrics.at("accuracy");
  const auto& g = s.gplq();
  const auto& d = s.direct(s.config());
  const double d_q = d.report.metrics.at("accuracy");
  const double d_lat = d.report.metrics.at("latent_accuracy");
  ExperimentResult out;
  out.table = {"basin",
               {"method", "quantized_accuracy", "latent_fp32_accuracy", "latent_drop"},
               {{"FP32 teacher", fmt(fp32), fmt(fp32), fmt(0.0)},
                {"GPLQ", fmt(g.acc_w4a4), fmt(g.acc_latent), fmt(fp32 - g.acc_latent)},
                {"Direct W4A4 QAT", fmt(d_q), fmt(d_lat), fmt(fp32 - d_lat)}}};
  out.metrics = {{"fp32", fp32},           {"gplq.w4a4", g.acc_w4a4},
                 {"gplq.latent", g.acc_latent}, {"direct.w4a4", d_q},
                 {"direct.latent", d_lat}};
  out.report = base_report(s);
  out.report.stages.push_back(s.teacher().report);
  add_gplq(out.report, g, "gplq");
  out.report.stages.push_back(d.report);
  return out;
}

ExperimentResult pca_dims(Session& s) {
  const auto& base = s.gplq();
  const std::size_t d = s.config().model.embed_dim;
  const std::size_t auto_k = base.stage1.pca ? base.stage1.pca->k() : 0;
  std::set<std::size_t> ks = {0, 32, 64, d};
  std::erase_if(ks, [&](std::size_t k) { return k > d; });

  ExperimentResult out;
  out.table = {"pca_dims",
               {"components", "explained_variance", "w32a4_accuracy", "w4a4_accuracy",
                "probe_accuracy"},
               {}};
  out.report = base_report(s);
  out.metrics["auto_k"] = static_cast<double>(auto_k);
  for (std::size_t k : ks) {
    PipelineConfig v = s.config();
    if (k == 0) {
      v.stage1.loss_mode = LossMode::ce_only;
    } else if (k != auto_k) {
      v.stage1.pca.force_components = k;
    }
    const auto& r = s.gplq(v);
    const double explained = r.stage1.pca ? r.stage1.pca->cumulative_explained : 0.0;
    const std::string key = "k" + std::to_string(k);
    out.table.rows.push_back({k == 0 ? "0 (off)" : std::to_string(k), fmt(explained, 4),
                              fmt(r.acc_w32a4), fmt(r.acc_w4a4), fmt(r.probe)});
    out.metrics[key + ".explained"] = explained;
    out.metrics[key + ".w32a4"] = r.acc_w32a4;
    out.metrics[key + ".w4a4"] = r.acc_w4a4;
    out.metrics[key + ".probe"] = r.probe;
    add_gplq(out.report, r, key);
  }
  return out;
}

ExperimentResult data_volume(Session& s) {
  ExperimentResult out;
  out.table = {"data_volume", {"fraction", "iterations", "w32a4_accuracy", "w4a4_accuracy"}, {}};
  out.report = base_report(s);
  for (auto [label, f] : std::vector<std::pair<std::string, double>>{
           {"1%", 0.01}, {"10%", 0.1}, {"100%", 1.0}}) {
    PipelineConfig v = s.config();
    v.stage1.data_fraction = f;
    const auto& r = s.gplq(v);
    const double steps = r.stage1.report.metrics.at("steps");
    out.table.rows.push_back({label, fmt(steps, 0), fmt(r.acc_w32a4), fmt(r.acc_w4a4)});
    const std::string key = "f" + label.substr(0, label.size() - 1);
    out.metrics[key + ".steps"] = steps;
    out.metrics[key + ".w32a4"] = r.acc_w32a4;
    out.metrics[key + ".w4a4"] = r.acc_w4a4;
    add_gplq(out.report, r, "fraction_" + label.substr(0, label.size() - 1));
  }
  return out;
}

ExperimentResult direct_vs_sequential(Session& s) {
  const auto& g = s.gplq();
  const auto& d = s.direct(s.config());
  const double d_probe = s.direct_probe(s.config());
  const auto& gm = g.stage1.report.metrics;
  const auto& dm = d.report.metrics;
  ExperimentResult out;
  out.table = {"direct_vs_sequential",
               {"method", "w4a4_accuracy", "latent_fp32_accuracy", "probe_accuracy",
                "peak_loss_ratio"},
               {{"GPLQ sequential", fmt(g.acc_w4a4), fmt(g.acc_latent), fmt(g.probe),
                 fmt(gm.at("peak_ratio"), 4)},
                {"Direct W4A4 QAT", fmt(dm.at("accuracy")), fmt(dm.at("latent_accuracy")),
                 fmt(d_probe), fmt(dm.at("peak_ratio"), 4)}}};
  out.metrics = {{"gplq.w4a4", g.acc_w4a4},
                 {"gplq.latent", g.acc_latent},
                 {"gplq.probe", g.probe},
                 {"gplq.peak_ratio", gm.at("peak_ratio")},
                 {"gplq.peak_loss", gm.at("peak_loss")},
                 {"direct.w4a4", dm.at("accuracy")},
                 {"direct.latent", dm.at("latent_accuracy")},
                 {"direct.probe", d_probe},
                 {"direct.peak_ratio", dm.at("peak_ratio")},
                 {"direct.peak_loss", dm.at("peak_loss")}};
  out.report = base_report(s);
  add_gplq(out.report, g, "gplq");
  out.report.stages.push_back(d.report);
  return out;
}

using Runner = std::function<ExperimentResult(Session&)>;

const std::map<std::string, Runner>& registry() {
  static const std::map<std::string, Runner> r = {
      {"sensitivity", sensitivity}, {"granularity", granularity},
      {"components", components},   {"basin", basin},
      {"pca_dims", pca_dims},       {"data_volume", data_volume},
      {"direct_vs_sequential", direct_vs_sequential}};
  return r;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, v] : registry()) n.push_back(k);
    return n;
  }();
  return names;
}

ExperimentResult run_experiment(const std::string& name, Session& session) {
  auto it = registry().find(name);
  if (it == registry().end()) throw PreconditionError("unknown experiment '" + name + "'");
  return it->second(session);
}

}  // namespace gplq::pipeline
