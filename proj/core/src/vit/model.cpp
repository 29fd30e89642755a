// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/vit/model.hpp"

#include <algorithm>
#include <cmath>

#include "gplq/error.hpp"
#include "gplq/nd/rng.hpp"

namespace gplq::vit {

void ModelConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size must be a positive multiple of patch_size");
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim must be divisible by heads");
  }
  if (in_channels == 0 || depth == 0 || mlp_ratio == 0 || num_classes == 0) {
    throw ConfigError("model dimensions must be positive");
  }
}

namespace {

std::string block(std::size_t i) { return "blocks." + std::to_string(i); }

}  // namespace

Model::Model(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  const std::size_t hid = config_.hidden_dim();
  auto linear = [&](const std::string& name, std::size_t out, std::size_t in) {
    params_.emplace(name + ".weight", Tensor({out, in}));
    params_.emplace(name + ".bias", Tensor({out}));
  };
  auto norm = [&](const std::string& name) {
    params_.emplace(name + ".gamma", Tensor({d}, 1.0));
    params_.emplace(name + ".beta", Tensor({d}));
  };
  linear("patch_embed", d, config_.patch_dim());
  params_.emplace("pos_embed", Tensor({config_.tokens(), d}));
  for (std::size_t i = 0; i < config_.depth; ++i) {
    norm(block(i) + ".ln1");
    linear(block(i) + ".qkv", 3 * d, d);
    linear(block(i) + ".proj", d, d);
    norm(block(i) + ".ln2");
    linear(block(i) + ".fc1", hid, d);
    linear(block(i) + ".fc2", d, hid);
  }
  norm("ln_final");
  linear("head", config_.num_classes, d);
}

Model Model::initialize(const ModelConfig& config, std::uint64_t seed) {
  Model model(config);
  nd::Rng rng(seed);
  // Parameters are visited in name order, so initialization depends only on
  // (config, seed).
  for (auto& [name, tensor] : model.params_) {
    const bool is_weight = name.ends_with(".weight") || name == "pos_embed";
    if (!is_weight) continue;
    for (double& v : tensor.values()) {
      double z = rng.normal();
      while (std::abs(z) > 2.0) z = rng.normal();
      v = 0.02 * z;
    }
  }
  return model;
}

Tensor& Model::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw PreconditionError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw PreconditionError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> Model::linear_layers() const {
  std::vector<std::string> out{"patch_embed"};
  for (std::size_t i = 0; i < config_.depth; ++i) {
    for (const char* l : {".qkv", ".proj", ".fc1", ".fc2"}) out.push_back(block(i) + l);
  }
  out.push_back("head");
  return out;
}

std::vector<std::string> Model::sites() const {
  std::vector<std::string> out{input_site("patch_embed")};
  for (std::size_t i = 0; i < config_.depth; ++i) {
    const std::string b = block(i);
    out.push_back(input_site(b + ".qkv"));
    for (const char* op : {".attn.q", ".attn.k", ".attn.p", ".attn.v"}) out.push_back(b + op);
    out.push_back(input_site(b + ".proj"));
    out.push_back(input_site(b + ".fc1"));
    out.push_back(input_site(b + ".fc2"));
  }
  out.push_back(input_site("head"));
  return out;
}

bool Model::has_site(const std::string& site) const {
  const auto all = sites();
  return std::find(all.begin(), all.end(), site) != all.end();
}

bool Model::has_linear(const std::string& layer) const {
  const auto all = linear_layers();
  return std::find(all.begin(), all.end(), layer) != all.end();
}

std::string input_site(const std::string& layer) { return layer + ".in"; }

std::vector<std::string> default_activation_sites(const ModelConfig& config) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < config.depth; ++i) {
    const std::string b = block(i);
    out.push_back(input_site(b + ".qkv"));
    for (const char* op : {".attn.q", ".attn.k", ".attn.p", ".attn.v"}) out.push_back(b + op);
    out.push_back(input_site(b + ".proj"));
    out.push_back(input_site(b + ".fc1"));
    out.push_back(input_site(b + ".fc2"));
  }
  out.push_back(input_site("head"));
  return out;
}

Tensor effective_weight(const Model& model, const QuantHooks* hooks, const std::string& layer) {
  const Tensor& w = model.param(layer + ".weight");
  if (hooks) {
    if (auto it = hooks->weights.find(layer); it != hooks->weights.end()) {
      return quant::fake_quantize(w, it->second.state, it->second.config);
    }
  }
  return w;
}

}  // namespace gplq::vit
