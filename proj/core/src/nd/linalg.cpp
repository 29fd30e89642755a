// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/nd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gplq/error.hpp"

namespace gplq::nd {

namespace {

void rotate(Tensor& a, double s, double tau, std::size_t i, std::size_t j, std::size_t k,
            std::size_t l) {
  const double g = a(i, j);
  const double h = a(k, l);
  a(i, j) = g - s * (h + g * tau);
  a(k, l) = h + s * (g - h * tau);
}

}  // namespace

SymEig sym_eig(const Tensor& input) {
  if (input.rank() != 2 || input.dim(0) != input.dim(1)) {
    throw ShapeError("sym_eig expects a square matrix, got " + shape_string(input.shape()));
  }
  const std::size_t n = input.dim(0);
  if (n > kSymEigMaxDim) throw PreconditionError("sym_eig: dimension exceeds 4096");
  input.require_finite("sym_eig input");

  const double sym_tol = 1e-9 * std::max(1.0, max_abs(input));
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(input(i, j) - input(j, i)) > sym_tol) {
        throw PreconditionError("sym_eig: input is not symmetric at (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
      }
      a(i, j) = 0.5 * (input(i, j) + input(j, i));
    }
  }

  Tensor v = identity(n);
  std::vector<double> d(n), b(n), z(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i] = b[i] = a(i, i);

  int sweeps = 0;
  bool converged = n < 2;
  while (!converged) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += std::abs(a(p, q));
    if (off == 0.0) {
      converged = true;
      break;
    }
    if (sweeps == kJacobiMaxSweeps) break;
    ++sweeps;

    const double tresh = sweeps < 4 ? 0.2 * off / static_cast<double>(n * n) : 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double g = 100.0 * std::abs(a(p, q));
        if (sweeps > 4 && std::abs(d[p]) + g == std::abs(d[p]) &&
            std::abs(d[q]) + g == std::abs(d[q])) {
          a(p, q) = 0.0;
          continue;
        }
        if (std::abs(a(p, q)) <= tresh) continue;

        double h = d[q] - d[p];
        double t;
        if (std::abs(h) + g == std::abs(h)) {
          t = a(p, q) / h;
        } else {
          const double theta = 0.5 * h / a(p, q);
          t = 1.0 / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
          if (theta < 0.0) t = -t;
        }
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const double tau = s / (1.0 + c);
        h = t * a(p, q);
        z[p] -= h;
        z[q] += h;
        d[p] -= h;
        d[q] += h;
        a(p, q) = 0.0;
        for (std::size_t j = 0; j < p; ++j) rotate(a, s, tau, j, p, j, q);
        for (std::size_t j = p + 1; j < q; ++j) rotate(a, s, tau, p, j, j, q);
        for (std::size_t j = q + 1; j < n; ++j) rotate(a, s, tau, p, j, q, j);
        for (std::size_t j = 0; j < n; ++j) rotate(v, s, tau, j, p, j, q);
      }
    }
    for (std::size_t p = 0; p < n; ++p) {
      b[p] += z[p];
      d[p] = b[p];
      z[p] = 0.0;
    }
  }
  if (!converged) {
    throw NumericError("sym_eig: Jacobi did not converge within " +
                       std::to_string(kJacobiMaxSweeps) + " sweeps");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return d[x] > d[y]; });

  SymEig out{Tensor({n}), Tensor({n, n}), sweeps};
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = d[order[k]];
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, k) = v(r, order[k]);
  }
  return out;
}

Tensor ridge_solve(const Tensor& g, double lambda, const Tensor& rhs) {
  if (g.rank() != 2 || g.dim(0) != g.dim(1)) {
    throw ShapeError("ridge_solve: gram matrix must be square, got " + shape_string(g.shape()));
  }
  const std::size_t d = g.dim(0);
  if (rhs.rank() != 2 || rhs.dim(1) != d) {
    throw ShapeError("ridge_solve: rhs " + shape_string(rhs.shape()) + " incompatible with gram " +
                     shape_string(g.shape()));
  }
  if (!(lambda >= 0.0)) throw PreconditionError("ridge_solve: lambda must be >= 0");
  g.require_finite("ridge_solve gram");
  rhs.require_finite("ridge_solve rhs");

  // Lower Cholesky factor of g + lambda*I.
  Tensor l({d, d});
  for (std::size_t j = 0; j < d; ++j) {
    double diag = g(j, j) + lambda;
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) {
      throw NumericError("ridge_solve: matrix not positive definite at pivot " + std::to_string(j));
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = 0.5 * (g(i, j) + g(j, i));
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }

  // (g + lambda I) is symmetric, so each row s of S solves (g + lambda I) s = r.
  const std::size_t m = rhs.dim(0);
  Tensor out({m, d});
  std::vector<double> y(d);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      double s = rhs(r, i);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
      y[i] = s / l(i, i);
    }
    for (std::size_t ii = d; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < d; ++k) s -= l(k, ii) * out(r, k);
      out(r, ii) = s / l(ii, ii);
    }
  }
  out.require_finite("ridge_solve result");
  return out;
}

double percentile_nearest_rank(std::span<const double> values, double p) {
  if (values.empty()) throw PreconditionError("percentile of an empty set");
  if (!(p > 0.0 && p <= 1.0)) throw PreconditionError("percentile p must lie in (0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  const std::size_t n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   sorted.end());
  return sorted[rank - 1];
}

double percentile_nearest_rank(const Tensor& values, double p) {
  return percentile_nearest_rank(values.values(), p);
}

}  // namespace gplq::nd
