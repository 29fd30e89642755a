// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <span>

#include "gplq/nd/tensor.hpp"

namespace gplq::nd {

struct SymEig {
  Tensor eigenvalues;   // [d], descending
  Tensor eigenvectors;  // [d x d], column i pairs with eigenvalues[i]
  int sweeps = 0;
};

inline constexpr int kJacobiMaxSweeps = 100;
inline constexpr std::size_t kSymEigMaxDim = 4096;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input must be symmetric to within 1e-9 (scaled by max(1, max|a|)); the
/// symmetric part is decomposed. Throws NumericError if the off-diagonal mass
/// has not vanished after kJacobiMaxSweeps sweeps.
SymEig sym_eig(const Tensor& a);

/// Returns S with S * (g + lambda*I) = rhs, via Cholesky of (g + lambda*I).
/// g is [d x d] symmetric PSD, rhs is [m x d].
Tensor ridge_solve(const Tensor& g, double lambda, const Tensor& rhs);

/// Nearest-rank percentile: sort ascending, take element ceil(p*n) - 1.
double percentile_nearest_rank(std::span<const double> values, double p);
double percentile_nearest_rank(const Tensor& values, double p);

}  // namespace gplq::nd
