// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gplq/nd/rng.hpp"
#include "gplq/quant/quantizer.hpp"

namespace gplq::quant {

/// Calibration statistics per slice: running extrema (minmax) or a reservoir
/// sample of observed values (percentile).
class Observer {
 public:
  static constexpr std::size_t kReservoirCap = std::size_t{1} << 20;

  Observer(ObserverKind kind, QuantizerConfig cfg, std::uint64_t seed = 0);

  void observe(const Tensor& x);
  void observe(std::span<const double> x, std::size_t rows, std::size_t cols);

  ObserverKind kind() const noexcept { return kind_; }
  const QuantizerConfig& config() const noexcept { return cfg_; }
  bool has_data() const noexcept { return observed_ > 0; }
  std::size_t slices() const noexcept { return slices_; }
  std::size_t retained(std::size_t slice) const;

  // [lo, hi] for one slice; percentile kind uses (p_low, p_high).
  std::pair<double, double> range(std::size_t slice) const;

 private:
  void ensure_slices(std::size_t n);
  void add_value(std::size_t slice, double v);

  ObserverKind kind_;
  QuantizerConfig cfg_;
  nd::Rng rng_;
  std::size_t slices_ = 0;
  std::uint64_t observed_ = 0;
  std::vector<double> lo_, hi_;
  std::vector<std::vector<double>> reservoir_;
  std::vector<std::uint64_t> seen_;
};

// per_token -> percentile, per_channel -> minmax, per_tensor -> cfg choice.
ObserverKind default_observer_kind(const QuantizerConfig& cfg);
Observer make_observer(const QuantizerConfig& cfg, std::uint64_t seed = 0);

/// Symmetric scale max(|lo|, |hi|) / qmax per slice, floored at kMinScale.
QuantizerState init_scale(const Observer& obs, const QuantizerConfig& cfg);

}  // namespace gplq::quant
