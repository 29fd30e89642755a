// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gplq/nd/tensor.hpp"
#include "gplq/quant/quantizer.hpp"
#include "gplq/qwt/compensation.hpp"

namespace gplq::vit {

using nd::Tensor;

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t in_channels = 3;
  std::size_t embed_dim = 96;
  std::size_t depth = 4;
  std::size_t heads = 3;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 10;

  void validate() const;
  std::size_t grid() const noexcept { return image_size / patch_size; }
  std::size_t tokens() const noexcept { return grid() * grid(); }
  std::size_t patch_dim() const noexcept { return in_channels * patch_size * patch_size; }
  std::size_t head_dim() const noexcept { return embed_dim / heads; }
  std::size_t hidden_dim() const noexcept { return embed_dim * mlp_ratio; }

  bool operator==(const ModelConfig&) const = default;
};

using ParamMap = std::map<std::string, Tensor>;

/// Plain pre-norm ViT encoder: patch embedding + learned positional
/// embedding, `depth` blocks of (LN, MHSA, residual, LN, GELU-MLP, residual),
/// final LN, mean pooling over tokens, linear classifier.
class Model {
 public:
  Model() = default;
  // All parameters allocated with their shapes and zero-filled.
  explicit Model(ModelConfig config);
  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParamMap& params() noexcept { return params_; }
  const ParamMap& params() const noexcept { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

  // Linear layers in forward (topological) order; each has
  // "<layer>.weight" [out x in] and "<layer>.bias" [out].
  std::vector<std::string> linear_layers() const;
  // Every activation-quantization insertion point.
  std::vector<std::string> sites() const;
  bool has_site(const std::string& site) const;
  bool has_linear(const std::string& layer) const;

  bool operator==(const Model&) const = default;

 private:
  ModelConfig config_;
  ParamMap params_;
};

std::string input_site(const std::string& layer);
// Inputs of every linear layer except the patch embedding, plus the
// operands of both attention matmuls (q, k, probabilities p, v).
std::vector<std::string> default_activation_sites(const ModelConfig& config);

/// Quantization state attached to a model. Activation quantizers are keyed
/// by site, weight quantizers and compensation layers by linear layer name.
struct QuantHooks {
  std::map<std::string, quant::Quantizer> activations;
  std::map<std::string, quant::Quantizer> weights;
  std::map<std::string, qwt::CompensationLayer> compensations;

  bool empty() const noexcept {
    return activations.empty() && weights.empty() && compensations.empty();
  }
};

// Fake-quantized weight for `layer` (the raw weight when it has no quantizer).
Tensor effective_weight(const Model& model, const QuantHooks* hooks, const std::string& layer);

}  // namespace gplq::vit
