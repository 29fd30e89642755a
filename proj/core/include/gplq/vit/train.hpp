// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "gplq/nd/tensor.hpp"

namespace gplq::vit {

using nd::Tensor;

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad;  // [N x K] = (softmax - onehot) / N
};

CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamSlot {
  Tensor m;
  Tensor v;
  std::int64_t step = 0;
};

/// One AdamW update with bias correction and decoupled weight decay:
///   p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)
void adamw_step(Tensor& param, const Tensor& grad, AdamSlot& slot, const AdamWConfig& cfg,
                bool apply_decay = true);

// Keeps one AdamSlot per named tensor.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(const std::string& name, Tensor& param, const Tensor& grad, bool apply_decay = true);
  const AdamWConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) noexcept { cfg_.lr = lr; }

 private:
  AdamWConfig cfg_;
  std::map<std::string, AdamSlot> slots_;
};

}  // namespace gplq::vit
