// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/mimic/pca.hpp"

#include <algorithm>
#include <cmath>

#include "gplq/error.hpp"
#include "gplq/nd/kernels.hpp"
#include "gplq/nd/linalg.hpp"

namespace gplq::mimic {

std::size_t select_component_count(const Tensor& explained_ratio, double target,
                                   std::size_t round_multiple) {
  const std::size_t d = explained_ratio.size();
  if (d == 0) throw PreconditionError("no explained-variance ratios");
  if (round_multiple == 0) throw PreconditionError("round_multiple must be positive");
  std::size_t raw = d;
  double cum = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    cum += explained_ratio[i];
    if (cum >= target) {
      raw = i + 1;
      break;
    }
  }
  const std::size_t rounded = (raw + round_multiple - 1) / round_multiple * round_multiple;
  return std::min(d, rounded);
}

PcaSubspace fit_pca(const Tensor& features, const PcaOptions& options) {
  if (features.rank() != 2) throw ShapeError("fit_pca expects [M x d] features");
  const std::size_t m = features.dim(0);
  const std::size_t d = features.dim(1);
  if (m < 2) throw PreconditionError("fit_pca needs at least two feature vectors");
  features.require_finite("teacher features");

  PcaSubspace sub;
  sub.mean = Tensor({d});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < d; ++c) sub.mean[c] += features(r, c);
  for (double& v : sub.mean.values()) v /= static_cast<double>(m);

  Tensor centered = features;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < d; ++c) centered(r, c) -= sub.mean[c];
  Tensor cov({d, d});
  nd::kernels::gemm_tn(centered.values(), centered.values(), cov.values(), d, m, d, false);
  for (double& v : cov.values()) v /= static_cast<double>(m - 1);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) cov(j, i) = cov(i, j);

  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) total += cov(i, i);
  if (!(total > 0.0)) {
    throw PreconditionError("teacher features have zero covariance; mimicking loss would be vacuous");
  }

  const nd::SymEig eig = nd::sym_eig(cov);
  Tensor ratios({d});
  for (std::size_t i = 0; i < d; ++i) ratios[i] = std::max(eig.eigenvalues[i], 0.0) / total;

  std::size_t k = options.force_components
                      ? std::min(d, *options.force_components)
                      : select_component_count(ratios, options.target_variance,
                                               options.round_multiple);
  if (k == 0) throw PreconditionError("PCA subspace needs at least one component");

  sub.components = Tensor({d, k});
  sub.explained_ratio = Tensor({k});
  for (std::size_t j = 0; j < k; ++j) {
    sub.explained_ratio[j] = ratios[j];
    sub.cumulative_explained += ratios[j];
    for (std::size_t r = 0; r < d; ++r) sub.components(r, j) = eig.eigenvectors(r, j);
  }
  sub.cumulative_explained = std::min(sub.cumulative_explained, 1.0);
  return sub;
}

PcaLoss loss_pca(const Tensor& student, const Tensor& teacher, const PcaSubspace& sub) {
  nd::require_same_shape(student, teacher, "loss_pca");
  if (student.rank() != 2 || student.dim(1) != sub.dim()) {
    throw ShapeError("loss_pca: features " + nd::shape_string(student.shape()) +
                     " do not match a subspace of dimension " + std::to_string(sub.dim()));
  }
  const std::size_t n = student.dim(0);
  const std::size_t d = sub.dim();
  const std::size_t k = sub.k();
  if (n == 0) throw PreconditionError("loss_pca on an empty batch");

  // The teacher mean cancels between the two projected terms, so the
  // residual is projected directly: (f_s - f_t) V.
  const Tensor diff = nd::sub(student, teacher);
  Tensor proj({n, k});
  nd::kernels::gemm_nn(diff.values(), sub.components.values(), proj.values(), n, d, k, false);

  PcaLoss out{0.0, Tensor({n, d})};
  for (double v : proj.values()) out.loss += v * v;
  out.loss /= static_cast<double>(n);
  nd::kernels::gemm_nt(proj.values(), sub.components.values(), out.grad_student.values(), n, k, d,
                       false);
  for (double& v : out.grad_student.values()) v *= 2.0 / static_cast<double>(n);
  return out;
}

}  // namespace gplq::mimic
