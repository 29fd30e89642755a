// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <optional>
#include <string>

#include "gplq/nd/tensor.hpp"

namespace gplq::qwt {

using nd::Tensor;

inline constexpr double kDefaultLambdaRel = 1e-6;

/// Linear correction y_z + W* x_z attached to one weight-quantized linear layer.
struct CompensationLayer {
  Tensor w_star;  // [d_out x d_in]
  double lambda_used = 0.0;
  std::string target_layer;
  std::optional<Tensor> augmented_bias;  // [d_out]
};

// Columns are samples: x_z [d_in x N], y and y_z [d_out x N].
CompensationLayer solve_compensation(const Tensor& x_z, const Tensor& y, const Tensor& y_z,
                                     double lambda_rel = kDefaultLambdaRel,
                                     bool augment_bias = false);

// Same solve with an absolute regularizer instead of one relative to mean(diag(X X^T)).
CompensationLayer solve_compensation_absolute(const Tensor& x_z, const Tensor& y, const Tensor& y_z,
                                              double lambda, bool augment_bias = false);

/// y_z + W* x_z (+ bias), shapes as in solve_compensation.
Tensor apply_compensation(const Tensor& layer_output_quantized, const Tensor& x_z,
                          const CompensationLayer& comp);

/// Streams calibration rows into the normal equations so a layer can be
/// solved without materializing X_Z. Rows are samples here:
/// x [n x d_in], residual = Y - Y_Z as [n x d_out].
class CompensationAccumulator {
 public:
  CompensationAccumulator(std::size_t d_in, std::size_t d_out, bool augment_bias = false);

  void add(const Tensor& x_rows, const Tensor& residual_rows);
  void add(std::span<const double> x_rows, std::span<const double> residual_rows, std::size_t n);

  std::size_t samples() const noexcept { return samples_; }
  // lambda = lambda_rel * mean(diag(X X^T)) over the original d_in inputs.
  CompensationLayer solve(double lambda_rel, const std::string& target_layer) const;
  CompensationLayer solve_absolute(double lambda, const std::string& target_layer) const;

 private:
  std::size_t d_in_;
  std::size_t d_out_;
  bool augment_;
  std::size_t samples_ = 0;
  Tensor gram_;   // [d x d], d = d_in (+1 when augmented)
  Tensor cross_;  // [d_out x d]
};

}  // namespace gplq::qwt
