// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/vit/train.hpp"

#include <algorithm>
#include <cmath>

#include "gplq/error.hpp"

namespace gplq::vit {

CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects [N x K] logits");
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match batch");
  if (n == 0) throw PreconditionError("cross_entropy on an empty batch");
  logits.require_finite("cross_entropy logits");

  CrossEntropy out{0.0, Tensor({n, k})};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw PreconditionError("label " + std::to_string(label) + " out of range [0, " +
                              std::to_string(k) + ")");
    }
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    out.loss += (log_z - row[static_cast<std::size_t>(label)]) * inv_n;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - log_z);
      out.grad(i, j) = (p - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0)) * inv_n;
    }
  }
  return out;
}

void adamw_step(Tensor& param, const Tensor& grad, AdamSlot& slot, const AdamWConfig& cfg,
                bool apply_decay) {
  nd::require_same_shape(param, grad, "adamw_step");
  grad.require_finite("optimizer gradient");
  if (slot.m.empty()) {
    slot.m = Tensor(param.shape());
    slot.v = Tensor(param.shape());
  }
  nd::require_same_shape(param, slot.m, "adamw_step state");
  ++slot.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.step));
  const double decay = apply_decay ? cfg.lr * cfg.weight_decay : 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
    slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = slot.m[i] / bc1;
    const double v_hat = slot.v[i] / bc2;
    param[i] -= decay * param[i];
    param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

void AdamW::step(const std::string& name, Tensor& param, const Tensor& grad, bool apply_decay) {
  adamw_step(param, grad, slots_[name], cfg_, apply_decay);
}

}  // namespace gplq::vit
