// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <optional>

#include "gplq/nd/tensor.hpp"

namespace gplq::mimic {

using nd::Tensor;

/// Principal subspace of the teacher's feature distribution.
struct PcaSubspace {
  Tensor mean;             // [d]
  Tensor components;       // [d x k], orthonormal columns, descending variance
  Tensor explained_ratio;  // [k], nonincreasing
  double cumulative_explained = 0.0;

  std::size_t dim() const noexcept { return mean.size(); }
  std::size_t k() const noexcept { return components.rank() == 2 ? components.dim(1) : 0; }
};

struct PcaOptions {
  double target_variance = 0.6;
  std::size_t round_multiple = 32;
  // Overrides the variance rule with an explicit component count (capped at d).
  std::optional<std::size_t> force_components;
};

/// Smallest k whose cumulative ratio reaches `target`, rounded up to a
/// multiple of `round_multiple` and capped at ratios.size().
std::size_t select_component_count(const Tensor& explained_ratio, double target,
                                   std::size_t round_multiple);

/// Fits the subspace on teacher features [M x d] using the sample
/// covariance (M - 1 normalization).
PcaSubspace fit_pca(const Tensor& teacher_features, const PcaOptions& options = {});

struct PcaLoss {
  double loss = 0.0;
  Tensor grad_student;  // [N x d]
};

/// (1/N) sum_i || (f_s^i - mu) V - (f_t^i - mu) V ||^2 and its gradient
/// with respect to f_s, (2/N) (f_s - f_t) V V^T.
PcaLoss loss_pca(const Tensor& student, const Tensor& teacher, const PcaSubspace& sub);

}  // namespace gplq::mimic
