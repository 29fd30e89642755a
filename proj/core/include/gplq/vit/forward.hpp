// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "gplq/vit/model.hpp"

namespace gplq::vit {

// Called with each hooked-or-not site value *before* quantization, as a
// [rows x cols] view. Forward runs sequentially when any tap is set.
using SiteTap = std::function<void(const std::string& site, std::span<const double> values,
                                   std::size_t rows, std::size_t cols)>;
// Called per sample for each linear layer with the (quantized) input
// [rows x in] and the layer output [rows x out] excluding compensation.
using LayerTap = std::function<void(const std::string& layer, std::span<const double> input,
                                    std::span<const double> output, std::size_t rows)>;

struct ForwardOptions {
  const QuantHooks* hooks = nullptr;
  bool record = false;
  SiteTap site_tap;
  LayerTap layer_tap;
};

class Tape;

struct ForwardResult {
  Tensor logits;    // [N x classes]
  Tensor features;  // [N x d], mean-pooled tokens after the final LayerNorm
  std::shared_ptr<Tape> tape;  // set when record = true
};

ForwardResult forward(const Model& model, const Tensor& batch, const ForwardOptions& options);
ForwardResult forward(const Model& model, const Tensor& batch, const QuantHooks* hooks = nullptr,
                      bool record = false);

struct Gradients {
  ParamMap params;                             // same names as Model::params()
  std::map<std::string, Tensor> act_scales;    // site -> dL/ds
  std::map<std::string, Tensor> weight_scales; // layer -> dL/ds
};

/// Reverse pass over a recorded forward. `logits_grad` is dL/dlogits
/// [N x classes]; `feature_grad`, when non-null, is an extra dL/dfeatures
/// [N x d] term (e.g. a feature-mimicking loss). Quantizer sites route
/// gradients through the STE and produce LSQ scale gradients for learnable,
/// unfrozen quantizers. A tape can be consumed once.
Gradients backward(Tape& tape, const Tensor& logits_grad, const Tensor* feature_grad = nullptr);

}  // namespace gplq::vit
