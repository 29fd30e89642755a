// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/quant/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "gplq/error.hpp"

namespace gplq::quant {

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::per_tensor: return "per_tensor";
    case Granularity::per_channel: return "per_channel";
    case Granularity::per_token: return "per_token";
  }
  return "?";
}

std::string_view to_string(Role r) { return r == Role::activation ? "activation" : "weight"; }

std::string_view to_string(ObserverKind k) {
  return k == ObserverKind::minmax ? "minmax" : "percentile";
}

Granularity granularity_from_string(std::string_view s) {
  if (s == "per_tensor") return Granularity::per_tensor;
  if (s == "per_channel") return Granularity::per_channel;
  if (s == "per_token") return Granularity::per_token;
  throw ConfigError("unknown granularity '" + std::string(s) + "'");
}

ObserverKind observer_kind_from_string(std::string_view s) {
  if (s == "minmax") return ObserverKind::minmax;
  if (s == "percentile") return ObserverKind::percentile;
  throw ConfigError("unknown observer kind '" + std::string(s) + "'");
}

void QuantizerConfig::validate() const {
  if (bits < 2 || bits > 16) throw ConfigError("quantizer bits must lie in [2, 16]");
  if (!(p_low > 0.0 && p_low < p_high && p_high <= 1.0)) {
    throw ConfigError("percentile bounds must satisfy 0 < p_low < p_high <= 1");
  }
}

std::size_t slice_count(std::size_t rows, std::size_t cols, const QuantizerConfig& cfg) {
  switch (cfg.granularity) {
    case Granularity::per_tensor: return 1;
    case Granularity::per_channel: return cfg.role == Role::activation ? cols : rows;
    case Granularity::per_token: return rows;
  }
  return 1;
}

std::size_t slice_count(const Tensor& x, const QuantizerConfig& cfg) {
  return slice_count(x.rows(), x.cols(), cfg);
}

namespace {

// Maps element (r, c) to its slice. Kept inline in the hot loops below via
// the stride pair: slice = r * row_stride + c * col_stride.
struct SliceStride {
  std::size_t row_stride;
  std::size_t col_stride;
};

SliceStride slice_stride(const QuantizerConfig& cfg) {
  switch (cfg.granularity) {
    case Granularity::per_tensor: return {0, 0};
    case Granularity::per_channel:
      return cfg.role == Role::activation ? SliceStride{0, 1} : SliceStride{1, 0};
    case Granularity::per_token: return {1, 0};
  }
  return {0, 0};
}

void check_scale_span(std::span<const double> scale, std::size_t rows, std::size_t cols,
                      const QuantizerConfig& cfg) {
  const std::size_t expected = slice_count(rows, cols, cfg);
  if (scale.size() != expected) {
    throw ShapeError("quantizer scale has " + std::to_string(scale.size()) + " entries, expected " +
                     std::to_string(expected) + " for " + std::string(to_string(cfg.granularity)));
  }
  for (double s : scale) {
    if (!(s > 0.0) || !std::isfinite(s)) throw PreconditionError("quantizer scale must be positive");
  }
}

}  // namespace

void check_scale(const QuantizerState& state, std::size_t rows, std::size_t cols,
                 const QuantizerConfig& cfg) {
  check_scale_span(state.scale.values(), rows, cols, cfg);
}

void fake_quantize_into(std::span<const double> x, std::size_t rows, std::size_t cols,
                        std::span<const double> scale, const QuantizerConfig& cfg,
                        std::span<double> out) {
  check_scale_span(scale, rows, cols, cfg);
  const double qmin = cfg.qmin();
  const double qmax = cfg.qmax();
  const auto [rs, cs] = slice_stride(cfg);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double s = scale[r * rs + c * cs];
      const std::size_t i = r * cols + c;
      const double q = std::clamp(std::round(x[i] / s), qmin, qmax);
      out[i] = q * s;
    }
  }
}

void quantize_backward(std::span<const double> x, std::span<const double> upstream,
                       std::size_t rows, std::size_t cols, std::span<const double> scale,
                       const QuantizerConfig& cfg, std::span<double> grad_in,
                       std::span<double> grad_scale) {
  check_scale_span(scale, rows, cols, cfg);
  const double qmin = cfg.qmin();
  const double qmax = cfg.qmax();
  const auto [rs, cs] = slice_stride(cfg);
  const bool want_in = !grad_in.empty();
  const bool want_scale = !grad_scale.empty();
  const std::size_t slices = scale.size();
  if (want_scale && grad_scale.size() != slices) throw ShapeError("scale gradient length mismatch");

  // Accumulate per-slice sums locally so the gradient-scale factor is applied
  // once per slice.
  std::vector<double> acc(want_scale ? slices : 0, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t slice = r * rs + c * cs;
      const std::size_t i = r * cols + c;
      const double v = x[i] / scale[slice];
      const bool below = v < qmin;
      const bool above = v > qmax;
      if (want_in) grad_in[i] = (below || above) ? 0.0 : upstream[i];
      if (want_scale) {
        const double g = below ? qmin : above ? qmax : std::round(v) - v;
        acc[slice] += upstream[i] * g;
      }
    }
  }
  if (want_scale) {
    const double per_slice = static_cast<double>(rows * cols) / static_cast<double>(slices);
    const double factor = cfg.lsq_grad_scale ? 1.0 / std::sqrt(per_slice * qmax) : 1.0;
    for (std::size_t k = 0; k < slices; ++k) grad_scale[k] += acc[k] * factor;
  }
}

Tensor fake_quantize(const Tensor& x, const QuantizerState& state, const QuantizerConfig& cfg) {
  Tensor out(x.shape());
  fake_quantize_into(x.values(), x.rows(), x.cols(), state.scale.values(), cfg, out.values());
  return out;
}

Tensor ste_input_grad(const Tensor& x, const Tensor& upstream, const QuantizerState& state,
                      const QuantizerConfig& cfg) {
  nd::require_same_shape(x, upstream, "ste_input_grad");
  Tensor grad(x.shape());
  quantize_backward(x.values(), upstream.values(), x.rows(), x.cols(), state.scale.values(), cfg,
                    grad.values(), {});
  return grad;
}

Tensor lsq_scale_grad(const Tensor& x, const Tensor& upstream, const QuantizerState& state,
                      const QuantizerConfig& cfg) {
  nd::require_same_shape(x, upstream, "lsq_scale_grad");
  Tensor grad(state.scale.shape());
  quantize_backward(x.values(), upstream.values(), x.rows(), x.cols(), state.scale.values(), cfg,
                    {}, grad.values());
  return grad;
}

void project_scale(QuantizerState& state) {
  for (double& s : state.scale.values()) s = std::max(s, kMinScale);
}

}  // namespace gplq::quant
