// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/qwt/compensation.hpp"

#include <vector>

#include "gplq/error.hpp"
#include "gplq/nd/kernels.hpp"
#include "gplq/nd/linalg.hpp"

namespace gplq::qwt {

namespace {

void check_shapes(const Tensor& x_z, const Tensor& y, const Tensor& y_z) {
  if (x_z.rank() != 2 || y.rank() != 2 || y_z.rank() != 2) {
    throw ShapeError("compensation operands must be matrices");
  }
  nd::require_same_shape(y, y_z, "solve_compensation outputs");
  if (x_z.dim(1) != y.dim(1)) {
    throw ShapeError("compensation: x_z has " + std::to_string(x_z.dim(1)) + " samples, y has " +
                     std::to_string(y.dim(1)));
  }
  if (x_z.dim(1) == 0) throw PreconditionError("compensation needs at least one sample");
}

CompensationLayer solve_impl(const Tensor& x_z, const Tensor& y, const Tensor& y_z, double lambda,
                             bool relative, bool augment_bias) {
  check_shapes(x_z, y, y_z);
  const std::size_t d_in = x_z.dim(0);
  const std::size_t d_out = y.dim(0);
  const std::size_t n = x_z.dim(1);
  CompensationAccumulator acc(d_in, d_out, augment_bias);
  // Transpose into row-per-sample layout.
  const Tensor xt = nd::transpose(x_z);
  const Tensor rt = nd::transpose(nd::sub(y, y_z));
  acc.add(xt.values(), rt.values(), n);
  return relative ? acc.solve(lambda, "") : acc.solve_absolute(lambda, "");
}

}  // namespace

CompensationAccumulator::CompensationAccumulator(std::size_t d_in, std::size_t d_out,
                                                 bool augment_bias)
    : d_in_(d_in), d_out_(d_out), augment_(augment_bias) {
  const std::size_t d = d_in + (augment_bias ? 1 : 0);
  gram_ = Tensor({d, d});
  cross_ = Tensor({d_out, d});
}

void CompensationAccumulator::add(const Tensor& x_rows, const Tensor& residual_rows) {
  if (x_rows.rank() != 2 || residual_rows.rank() != 2 || x_rows.dim(0) != residual_rows.dim(0)) {
    throw ShapeError("compensation accumulator: row counts disagree");
  }
  add(x_rows.values(), residual_rows.values(), x_rows.dim(0));
}

void CompensationAccumulator::add(std::span<const double> x_rows,
                                  std::span<const double> residual_rows, std::size_t n) {
  if (x_rows.size() != n * d_in_ || residual_rows.size() != n * d_out_) {
    throw ShapeError("compensation accumulator: operand sizes do not match layer dims");
  }
  const std::size_t d = d_in_ + (augment_ ? 1 : 0);
  std::span<const double> x = x_rows;
  std::vector<double> padded;
  if (augment_) {
    padded.resize(n * d);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d_in_; ++c) padded[r * d + c] = x_rows[r * d_in_ + c];
      padded[r * d + d_in_] = 1.0;
    }
    x = padded;
  }
  nd::kernels::gemm_tn(x, x, gram_.values(), d, n, d, true);
  nd::kernels::gemm_tn(residual_rows, x, cross_.values(), d_out_, n, d, true);
  samples_ += n;
}

CompensationLayer CompensationAccumulator::solve(double lambda_rel,
                                                 const std::string& target_layer) const {
  if (!(lambda_rel >= 0.0)) throw PreconditionError("lambda_rel must be >= 0");
  double trace = 0.0;
  for (std::size_t i = 0; i < d_in_; ++i) trace += gram_(i, i);
  return solve_absolute(lambda_rel * trace / static_cast<double>(d_in_), target_layer);
}

CompensationLayer CompensationAccumulator::solve_absolute(double lambda,
                                                          const std::string& target_layer) const {
  if (samples_ == 0) throw PreconditionError("compensation solve without calibration samples");
  if (!(lambda >= 0.0)) throw PreconditionError("lambda must be >= 0");
  Tensor sol = nd::ridge_solve(gram_, lambda, cross_);
  CompensationLayer out;
  out.lambda_used = lambda;
  out.target_layer = target_layer;
  if (!augment_) {
    out.w_star = std::move(sol);
    return out;
  }
  out.w_star = Tensor({d_out_, d_in_});
  Tensor bias({d_out_});
  const std::size_t d = d_in_ + 1;
  for (std::size_t r = 0; r < d_out_; ++r) {
    for (std::size_t c = 0; c < d_in_; ++c) out.w_star(r, c) = sol[r * d + c];
    bias[r] = sol[r * d + d_in_];
  }
  out.augmented_bias = std::move(bias);
  return out;
}

CompensationLayer solve_compensation(const Tensor& x_z, const Tensor& y, const Tensor& y_z,
                                     double lambda_rel, bool augment_bias) {
  if (!(lambda_rel >= 0.0)) throw PreconditionError("lambda_rel must be >= 0");
  return solve_impl(x_z, y, y_z, lambda_rel, true, augment_bias);
}

CompensationLayer solve_compensation_absolute(const Tensor& x_z, const Tensor& y, const Tensor& y_z,
                                              double lambda, bool augment_bias) {
  if (!(lambda >= 0.0)) throw PreconditionError("lambda must be >= 0");
  return solve_impl(x_z, y, y_z, lambda, false, augment_bias);
}

Tensor apply_compensation(const Tensor& layer_output_quantized, const Tensor& x_z,
                          const CompensationLayer& comp) {
  if (x_z.rank() != 2 || layer_output_quantized.rank() != 2 ||
      comp.w_star.dim(1) != x_z.dim(0) || comp.w_star.dim(0) != layer_output_quantized.dim(0) ||
      x_z.dim(1) != layer_output_quantized.dim(1)) {
    throw ShapeError("apply_compensation: operand shapes disagree with W*");
  }
  Tensor out = nd::add(layer_output_quantized, nd::matmul(comp.w_star, x_z));
  if (comp.augmented_bias) {
    for (std::size_t r = 0; r < out.dim(0); ++r)
      for (std::size_t c = 0; c < out.dim(1); ++c) out(r, c) += (*comp.augmented_bias)[r];
  }
  return out;
}

}  // namespace gplq::qwt
