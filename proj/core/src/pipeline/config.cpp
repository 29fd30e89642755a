// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/pipeline/config.hpp"

#include <cstdio>
#include <set>

#include <json.hpp>

#include "gplq/error.hpp"

namespace gplq::pipeline {

using nlohmann::json;

std::string_view to_string(LossMode m) {
  switch (m) {
    case LossMode::pca_only: return "pca_only";
    case LossMode::ce_only: return "ce_only";
    case LossMode::ce_plus_pca: return "ce_plus_pca";
  }
  return "?";
}

LossMode loss_mode_from_string(std::string_view s) {
  if (s == "pca_only") return LossMode::pca_only;
  if (s == "ce_only") return LossMode::ce_only;
  if (s == "ce_plus_pca") return LossMode::ce_plus_pca;
  throw ConfigError("unknown loss_mode '" + std::string(s) + "'");
}

void PipelineConfig::validate() const {
  model.validate();
  task_a.validate();
  task_b.validate();
  act.quantizer.validate();
  weight.quantizer.validate();
  if (act.quantizer.role != quant::Role::activation) throw ConfigError("act quantizer role");
  if (weight.quantizer.role != quant::Role::weight) throw ConfigError("weight quantizer role");
  if (weight.quantizer.granularity == quant::Granularity::per_token) {
    throw ConfigError("weights cannot be quantized per token");
  }
  if (task_a.kind != data::DatasetKind::cifar10 &&
      (task_a.image_size != model.image_size || task_a.channels != model.in_channels)) {
    throw ConfigError("task_a images do not match the model input");
  }
  if (task_b.kind != data::DatasetKind::cifar10 &&
      (task_b.image_size != model.image_size || task_b.channels != model.in_channels)) {
    throw ConfigError("task_b images do not match the model input");
  }
  if (task_a.num_classes != model.num_classes) {
    throw ConfigError("task_a num_classes must equal model.num_classes");
  }
  if (teacher.batch_size == 0 || stage1.batch_size == 0 || probe.batch_size == 0) {
    throw ConfigError("batch sizes must be positive");
  }
  if (!(teacher.lr >= 0.0) || !(stage1.lr >= 0.0) || !(probe.lr >= 0.0)) {
    throw ConfigError("learning rates must be >= 0");
  }
  if (!(stage1.data_fraction > 0.0 && stage1.data_fraction <= 1.0)) {
    throw ConfigError("stage1.data_fraction must lie in (0, 1]");
  }
  if (!(stage1.guard_ratio > 1.0)) throw ConfigError("stage1.guard_ratio must exceed 1");
  if (!(stage1.pca.target_variance > 0.0 && stage1.pca.target_variance <= 1.0)) {
    throw ConfigError("stage1.pca.target_variance must lie in (0, 1]");
  }
  if (stage1.pca.round_multiple == 0 || stage1.pca.fit_samples < 2) {
    throw ConfigError("stage1.pca needs round_multiple > 0 and fit_samples >= 2");
  }
  if (stage1.calib_samples == 0) throw ConfigError("stage1.calib_samples must be positive");
  if (!(stage2.lambda_rel >= 0.0)) throw ConfigError("stage2.lambda_rel must be >= 0");
  const vit::Model shape_only(model);
  for (const auto& s : act.sites) {
    if (!shape_only.has_site(s)) throw ConfigError("unknown activation site '" + s + "'");
  }
  for (const auto& l : weight.layers) {
    if (!shape_only.has_linear(l)) throw ConfigError("unknown weight layer '" + l + "'");
  }
  for (const auto& l : stage2.qwt_exclude) {
    if (!shape_only.has_linear(l)) throw ConfigError("unknown qwt_exclude layer '" + l + "'");
  }
}

void apply_paper_scale(PipelineConfig& cfg) {
  cfg.stage1.lr = 5e-6;
  cfg.stage1.batch_size = 16;
  cfg.stage1.weight_decay = 0.0;
  cfg.stage2.calib_samples = 512;
  cfg.probe.epochs = 100;
  cfg.probe.lr = 1e-3;
  cfg.probe.batch_size = 64;
}

std::vector<std::string> activation_sites(const PipelineConfig& cfg) {
  return cfg.act.sites.empty() ? vit::default_activation_sites(cfg.model) : cfg.act.sites;
}

std::vector<std::string> weight_layers(const PipelineConfig& cfg) {
  if (!cfg.weight.layers.empty()) {
    // Keep forward order whatever order the config lists them in.
    const std::set<std::string> wanted(cfg.weight.layers.begin(), cfg.weight.layers.end());
    std::vector<std::string> out;
    for (const auto& l : vit::Model(cfg.model).linear_layers()) {
      if (wanted.count(l)) out.push_back(l);
    }
    return out;
  }
  auto layers = vit::Model(cfg.model).linear_layers();
  std::erase(layers, std::string("patch_embed"));
  return layers;
}

namespace {

// Walks one JSON object, remembering which keys were read so leftovers can
// be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where() + "." + key + ": " + e.what());
    }
  }

  void get_size(const char* key, std::size_t& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_unsigned()) {
      throw ConfigError(where() + "." + key + " must be a non-negative integer");
    }
    out = it->get<std::size_t>();
  }

  void get_double(const char* key, double& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number()) throw ConfigError(where() + "." + key + " must be a number");
    out = it->get<double>();
  }

  std::optional<Reader> child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Reader(*it, path_ + "." + key);
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path_ + "." + it.key() + "'");
    }
  }

  std::string where() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json model_json(const vit::ModelConfig& m) {
  return {{"image_size", m.image_size}, {"patch_size", m.patch_size},
          {"in_channels", m.in_channels}, {"embed_dim", m.embed_dim},
          {"depth", m.depth},           {"heads", m.heads},
          {"mlp_ratio", m.mlp_ratio},   {"num_classes", m.num_classes}};
}

void read_model(Reader r, vit::ModelConfig& m) {
  r.get_size("image_size", m.image_size);
  r.get_size("patch_size", m.patch_size);
  r.get_size("in_channels", m.in_channels);
  r.get_size("embed_dim", m.embed_dim);
  r.get_size("depth", m.depth);
  r.get_size("heads", m.heads);
  r.get_size("mlp_ratio", m.mlp_ratio);
  r.get_size("num_classes", m.num_classes);
  r.finish();
}

json dataset_json(const data::DatasetSpec& d) {
  return {{"kind", std::string(data::to_string(d.kind))},
          {"num_train", d.num_train},
          {"num_val", d.num_val},
          {"image_size", d.image_size},
          {"num_classes", d.num_classes},
          {"channels", d.channels},
          {"noise", d.noise},
          {"path", d.path.string()}};
}

void read_dataset(Reader r, data::DatasetSpec& d) {
  std::string kind(data::to_string(d.kind));
  r.get("kind", kind);
  try {
    d.kind = data::dataset_kind_from_string(kind);
  } catch (const Error& e) {
    throw ConfigError(r.where() + ".kind: " + e.what());
  }
  r.get_size("num_train", d.num_train);
  r.get_size("num_val", d.num_val);
  r.get_size("image_size", d.image_size);
  r.get_size("num_classes", d.num_classes);
  r.get_size("channels", d.channels);
  r.get_double("noise", d.noise);
  std::string path = d.path.string();
  r.get("path", path);
  d.path = path;
  r.finish();
}

json quantizer_json(const quant::QuantizerConfig& q) {
  return {{"bits", q.bits},
          {"granularity", std::string(quant::to_string(q.granularity))},
          {"lsq_grad_scale", q.lsq_grad_scale},
          {"per_tensor_observer", std::string(quant::to_string(q.per_tensor_observer))},
          {"p_low", q.p_low},
          {"p_high", q.p_high}};
}

void read_quantizer(Reader& r, quant::QuantizerConfig& q) {
  r.get("bits", q.bits);
  std::string gran(quant::to_string(q.granularity));
  r.get("granularity", gran);
  std::string obs(quant::to_string(q.per_tensor_observer));
  r.get("per_tensor_observer", obs);
  try {
    q.granularity = quant::granularity_from_string(gran);
    q.per_tensor_observer = quant::observer_kind_from_string(obs);
  } catch (const Error& e) {
    throw ConfigError(r.where() + ": " + e.what());
  }
  r.get("lsq_grad_scale", q.lsq_grad_scale);
  r.get_double("p_low", q.p_low);
  r.get_double("p_high", q.p_high);
}

json to_json_value(const PipelineConfig& c) {
  json act = quantizer_json(c.act.quantizer);
  act["sites"] = c.act.sites;
  json weight = quantizer_json(c.weight.quantizer);
  weight["observer"] = std::string(quant::to_string(c.weight.observer));
  weight["layers"] = c.weight.layers;
  const auto& p = c.stage1.pca;
  json pca = {{"target_variance", p.target_variance},
              {"round_multiple", p.round_multiple},
              {"fit_samples", p.fit_samples},
              {"force_components", p.force_components ? json(*p.force_components) : json(nullptr)}};
  const auto& s1 = c.stage1;
  json stage1 = {{"epochs", s1.epochs},
                 {"lr", s1.lr},
                 {"batch_size", s1.batch_size},
                 {"weight_decay", s1.weight_decay},
                 {"loss_mode", std::string(to_string(s1.loss_mode))},
                 {"pca_weight", s1.pca_weight},
                 {"train_weights", s1.train_weights},
                 {"calib_samples", s1.calib_samples},
                 {"data_fraction", s1.data_fraction},
                 {"guard_ratio", s1.guard_ratio},
                 {"pca", pca}};
  const auto& s2 = c.stage2;
  json stage2 = {{"calib_samples", s2.calib_samples},
                 {"lambda_rel", s2.lambda_rel},
                 {"qwt_enabled", s2.qwt_enabled},
                 {"augment_bias", s2.augment_bias},
                 {"qwt_exclude", s2.qwt_exclude}};
  json teacher = {{"epochs", c.teacher.epochs},
                  {"lr", c.teacher.lr},
                  {"batch_size", c.teacher.batch_size},
                  {"weight_decay", c.teacher.weight_decay},
                  {"cosine_schedule", c.teacher.cosine_schedule}};
  json probe = {{"epochs", c.probe.epochs}, {"lr", c.probe.lr}, {"batch_size", c.probe.batch_size}};
  return {{"seed", c.seed},       {"model", model_json(c.model)},
          {"task_a", dataset_json(c.task_a)}, {"task_b", dataset_json(c.task_b)},
          {"teacher", teacher},   {"act", act},
          {"weight", weight},     {"stage1", stage1},
          {"stage2", stage2},     {"probe", probe}};
}

}  // namespace

std::string to_json(const PipelineConfig& cfg) { return to_json_value(cfg).dump(2) + "\n"; }

PipelineConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  PipelineConfig c;
  Reader root(j, "config");
  root.get("seed", c.seed);
  if (auto r = root.child("model")) read_model(*r, c.model);
  if (auto r = root.child("task_a")) read_dataset(*r, c.task_a);
  if (auto r = root.child("task_b")) read_dataset(*r, c.task_b);
  if (auto r = root.child("teacher")) {
    r->get_size("epochs", c.teacher.epochs);
    r->get_double("lr", c.teacher.lr);
    r->get_size("batch_size", c.teacher.batch_size);
    r->get_double("weight_decay", c.teacher.weight_decay);
    r->get("cosine_schedule", c.teacher.cosine_schedule);
    r->finish();
  }
  if (auto r = root.child("act")) {
    read_quantizer(*r, c.act.quantizer);
    r->get("sites", c.act.sites);
    r->finish();
  }
  if (auto r = root.child("weight")) {
    read_quantizer(*r, c.weight.quantizer);
    std::string obs(quant::to_string(c.weight.observer));
    r->get("observer", obs);
    try {
      c.weight.observer = quant::observer_kind_from_string(obs);
    } catch (const Error& e) {
      throw ConfigError(std::string("config.weight.observer: ") + e.what());
    }
    r->get("layers", c.weight.layers);
    r->finish();
  }
  if (auto r = root.child("stage1")) {
    auto& s1 = c.stage1;
    r->get_size("epochs", s1.epochs);
    r->get_double("lr", s1.lr);
    r->get_size("batch_size", s1.batch_size);
    r->get_double("weight_decay", s1.weight_decay);
    std::string mode(to_string(s1.loss_mode));
    r->get("loss_mode", mode);
    s1.loss_mode = loss_mode_from_string(mode);
    r->get_double("pca_weight", s1.pca_weight);
    r->get("train_weights", s1.train_weights);
    r->get_size("calib_samples", s1.calib_samples);
    r->get_double("data_fraction", s1.data_fraction);
    r->get_double("guard_ratio", s1.guard_ratio);
    if (auto p = r->child("pca")) {
      p->get_double("target_variance", s1.pca.target_variance);
      p->get_size("round_multiple", s1.pca.round_multiple);
      p->get_size("fit_samples", s1.pca.fit_samples);
      if (const json* fc = p->raw("force_components"); fc && !fc->is_null()) {
        if (!fc->is_number_unsigned()) {
          throw ConfigError("config.stage1.pca.force_components must be null or an integer");
        }
        s1.pca.force_components = fc->get<std::size_t>();
      }
      p->finish();
    }
    r->finish();
  }
  if (auto r = root.child("stage2")) {
    r->get_size("calib_samples", c.stage2.calib_samples);
    r->get_double("lambda_rel", c.stage2.lambda_rel);
    r->get("qwt_enabled", c.stage2.qwt_enabled);
    r->get("augment_bias", c.stage2.augment_bias);
    r->get("qwt_exclude", c.stage2.qwt_exclude);
    r->finish();
  }
  if (auto r = root.child("probe")) {
    r->get_size("epochs", c.probe.epochs);
    r->get_double("lr", c.probe.lr);
    r->get_size("batch_size", c.probe.batch_size);
    r->finish();
  }
  root.finish();
  c.weight.quantizer.role = quant::Role::weight;
  c.act.quantizer.role = quant::Role::activation;
  c.validate();
  return c;
}

std::string config_hash(const PipelineConfig& cfg) {
  PipelineConfig unseeded = cfg;
  unseeded.seed = 0;
  const std::string text = to_json(unseeded);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace gplq::pipeline
