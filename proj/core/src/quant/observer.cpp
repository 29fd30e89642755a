// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/quant/observer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gplq/error.hpp"
#include "gplq/nd/linalg.hpp"

namespace gplq::quant {

Observer::Observer(ObserverKind kind, QuantizerConfig cfg, std::uint64_t seed)
    : kind_(kind), cfg_(cfg), rng_(seed) {
  cfg_.validate();
}

void Observer::ensure_slices(std::size_t n) {
  if (slices_ == 0) {
    slices_ = n;
    lo_.assign(n, std::numeric_limits<double>::infinity());
    hi_.assign(n, -std::numeric_limits<double>::infinity());
    if (kind_ == ObserverKind::percentile) {
      reservoir_.assign(n, {});
      seen_.assign(n, 0);
    }
  } else if (slices_ != n) {
    throw ShapeError("observer saw " + std::to_string(n) + " slices after " +
                     std::to_string(slices_));
  }
}

void Observer::add_value(std::size_t slice, double v) {
  lo_[slice] = std::min(lo_[slice], v);
  hi_[slice] = std::max(hi_[slice], v);
  if (kind_ != ObserverKind::percentile) return;
  auto& buf = reservoir_[slice];
  const std::uint64_t seen = ++seen_[slice];
  if (buf.size() < kReservoirCap) {
    buf.push_back(v);
  } else {
    const std::uint64_t j = rng_.below(seen);
    if (j < kReservoirCap) buf[j] = v;
  }
}

void Observer::observe(const Tensor& x) { observe(x.values(), x.rows(), x.cols()); }

void Observer::observe(std::span<const double> x, std::size_t rows, std::size_t cols) {
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("observer received a non-finite value");
  }
  ensure_slices(slice_count(rows, cols, cfg_));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t slice = 0;
      switch (cfg_.granularity) {
        case Granularity::per_tensor: slice = 0; break;
        case Granularity::per_channel: slice = cfg_.role == Role::activation ? c : r; break;
        case Granularity::per_token: slice = r; break;
      }
      add_value(slice, x[r * cols + c]);
    }
  }
  ++observed_;
}

std::size_t Observer::retained(std::size_t slice) const {
  return kind_ == ObserverKind::percentile ? reservoir_.at(slice).size() : 0;
}

std::pair<double, double> Observer::range(std::size_t slice) const {
  if (!has_data()) throw PreconditionError("observer has not seen any data");
  if (slice >= slices_) throw ShapeError("observer slice out of range");
  if (kind_ == ObserverKind::minmax) return {lo_[slice], hi_[slice]};
  const auto& buf = reservoir_[slice];
  return {nd::percentile_nearest_rank(buf, cfg_.p_low), nd::percentile_nearest_rank(buf, cfg_.p_high)};
}

ObserverKind default_observer_kind(const QuantizerConfig& cfg) {
  switch (cfg.granularity) {
    case Granularity::per_token: return ObserverKind::percentile;
    case Granularity::per_channel: return ObserverKind::minmax;
    case Granularity::per_tensor: return cfg.per_tensor_observer;
  }
  return ObserverKind::minmax;
}

Observer make_observer(const QuantizerConfig& cfg, std::uint64_t seed) {
  return Observer(default_observer_kind(cfg), cfg, seed);
}

QuantizerState init_scale(const Observer& obs, const QuantizerConfig& cfg) {
  if (!obs.has_data()) throw PreconditionError("init_scale: observer has not seen any data");
  cfg.validate();
  QuantizerState state;
  state.scale = Tensor({obs.slices()});
  const double qmax = cfg.qmax();
  for (std::size_t k = 0; k < obs.slices(); ++k) {
    const auto [lo, hi] = obs.range(k);
    state.scale[k] = std::max(std::max(std::abs(lo), std::abs(hi)) / qmax, kMinScale);
  }
  return state;
}

}  // namespace gplq::quant
