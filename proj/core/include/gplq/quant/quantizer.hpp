// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "gplq/nd/tensor.hpp"

namespace gplq::quant {

using nd::Tensor;

// Slicing over which one scale applies. Every tensor is viewed as
// [rows x cols] with cols = last dimension:
//   per_tensor  -> one scale
//   per_channel -> one scale per column for activations, per row (output
//                  channel) for weights shaped [out x in]
//   per_token   -> one scale per row
enum class Granularity { per_tensor, per_channel, per_token };
enum class Role { activation, weight };
enum class ObserverKind { minmax, percentile };

std::string_view to_string(Granularity g);
std::string_view to_string(Role r);
std::string_view to_string(ObserverKind k);
Granularity granularity_from_string(std::string_view s);
ObserverKind observer_kind_from_string(std::string_view s);

inline constexpr double kMinScale = 1e-8;

struct QuantizerConfig {
  int bits = 4;
  Granularity granularity = Granularity::per_channel;
  Role role = Role::activation;
  // Multiply the LSQ scale gradient by 1/sqrt(N_slice * qmax).
  bool lsq_grad_scale = true;
  // Observer used for per-tensor granularity; per-token always uses the
  // percentile observer and per-channel always uses min-max.
  ObserverKind per_tensor_observer = ObserverKind::percentile;
  double p_low = 0.01;
  double p_high = 0.99;

  int qmin() const noexcept { return -(1 << (bits - 1)); }
  int qmax() const noexcept { return (1 << (bits - 1)) - 1; }
  void validate() const;

  bool operator==(const QuantizerConfig&) const = default;
};

struct QuantizerState {
  Tensor scale;  // [slices], strictly positive
  bool frozen = false;
  bool learnable = true;
};

struct Quantizer {
  QuantizerConfig config;
  QuantizerState state;
};

// Number of slices for a [rows x cols] view under `cfg`.
std::size_t slice_count(std::size_t rows, std::size_t cols, const QuantizerConfig& cfg);
std::size_t slice_count(const Tensor& x, const QuantizerConfig& cfg);

// Throws if the scale has the wrong length for x or is not strictly positive.
void check_scale(const QuantizerState& state, std::size_t rows, std::size_t cols,
                 const QuantizerConfig& cfg);

/// clamp(round(x/s), qmin, qmax) * s, rounding half away from zero.
Tensor fake_quantize(const Tensor& x, const QuantizerState& state, const QuantizerConfig& cfg);

/// Straight-through estimate of dL/dx: upstream where qmin <= x/s <= qmax, else 0.
Tensor ste_input_grad(const Tensor& x, const Tensor& upstream, const QuantizerState& state,
                      const QuantizerConfig& cfg);

/// LSQ estimate of dL/ds, one entry per slice.
Tensor lsq_scale_grad(const Tensor& x, const Tensor& upstream, const QuantizerState& state,
                      const QuantizerConfig& cfg);

// Span kernels behind the tensor API, used inside the model forward/backward.
void fake_quantize_into(std::span<const double> x, std::size_t rows, std::size_t cols,
                        std::span<const double> scale, const QuantizerConfig& cfg,
                        std::span<double> out);

// Writes the STE input gradient into grad_in and adds the LSQ scale gradient
// into grad_scale (length = slice count). Either output may be empty to skip it.
void quantize_backward(std::span<const double> x, std::span<const double> upstream,
                       std::size_t rows, std::size_t cols, std::span<const double> scale,
                       const QuantizerConfig& cfg, std::span<double> grad_in,
                       std::span<double> grad_scale);

// Projects every scale entry back to >= kMinScale after an optimizer step.
void project_scale(QuantizerState& state);

}  // namespace gplq::quant
