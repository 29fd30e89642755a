// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "gplq/data/dataset.hpp"
#include "gplq/error.hpp"

namespace gplq::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Generative parameters of one class: a grating with a class-locked
// orientation, frequency, phase and color.
struct ClassPattern {
  double theta;
  double freq;  // cycles per image
  double phase;
  std::vector<double> color;
};

// Task A: orientations on a regular grid starting at 0, two frequency bands,
// label = orientation-major. Task B: orientations offset by half a step,
// different bands, label = frequency-major. The family seed fixes phases and
// colors independently of the dataset seed.
std::vector<ClassPattern> class_patterns(DatasetKind kind, std::size_t classes,
                                         std::size_t channels) {
  const bool task_b = kind == DatasetKind::synthetic_b;
  const std::size_t bands = classes >= 2 ? 2 : 1;
  const std::size_t orientations = (classes + bands - 1) / bands;
  const double band_freq[2][2] = {{1.5, 3.5}, {2.5, 4.5}};
  nd::Rng family(task_b ? 0xb5b5b5b5ULL : 0xa1a1a1a1ULL);

  std::vector<ClassPattern> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t o, b;
    if (task_b) {
      b = c % bands;
      o = c / bands;
    } else {
      o = c % orientations;
      b = c / orientations;
    }
    const double offset = task_b ? 0.5 : 0.0;
    out[c].theta = std::numbers::pi * (static_cast<double>(o) + offset) /
                   static_cast<double>(orientations);
    out[c].freq = band_freq[task_b ? 1 : 0][b % 2];
    out[c].phase = family.uniform(0.0, kTwoPi);
    out[c].color.resize(channels);
    for (double& g : out[c].color) g = family.uniform(0.5, 1.5);
  }
  return out;
}

void render_sample(const DatasetSpec& spec, const std::vector<ClassPattern>& patterns,
                   nd::Rng& rng, double* image, int& label) {
  const std::size_t s = spec.image_size;
  const std::size_t k = spec.num_classes;
  label = static_cast<int>(rng.below(k));
  const ClassPattern& cp = patterns[static_cast<std::size_t>(label)];

  const double theta = cp.theta + rng.normal(0.0, 0.08);
  const double freq = cp.freq * (1.0 + rng.normal(0.0, 0.05));
  const double phase = cp.phase + rng.uniform(-0.6, 0.6);
  const double amp = rng.uniform(0.6, 1.0);

  // Nuisance grating shared by all classes: random orientation, band, phase.
  const double d_theta = rng.uniform(0.0, std::numbers::pi);
  const double d_freq = rng.uniform(1.0, 5.0);
  const double d_phase = rng.uniform(0.0, kTwoPi);
  const double d_amp = rng.uniform(0.0, 0.8);
  std::vector<double> d_color(spec.channels);
  for (double& g : d_color) g = rng.uniform(0.5, 1.5);

  const double ct = std::cos(theta), st = std::sin(theta);
  const double cd = std::cos(d_theta), sd = std::sin(d_theta);
  const double inv = 1.0 / static_cast<double>(s);
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const double u = static_cast<double>(x) * inv;
        const double v = static_cast<double>(y) * inv;
        const double signal = amp * cp.color[ch] * std::cos(kTwoPi * freq * (u * ct + v * st) + phase);
        const double nuisance =
            d_amp * d_color[ch] * std::cos(kTwoPi * d_freq * (u * cd + v * sd) + d_phase);
        image[(ch * s + y) * s + x] = signal + nuisance + rng.normal(0.0, spec.noise);
      }
    }
  }
}

Dataset render_split(const DatasetSpec& spec, const std::vector<ClassPattern>& patterns,
                     std::uint64_t split_stream, std::size_t count) {
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.images = Tensor({count, spec.channels, spec.image_size, spec.image_size});
  ds.labels.resize(count);
  const std::size_t len = ds.image_len();
  const std::uint64_t split_seed = nd::derive_seed(spec.seed, split_stream);
  for (std::size_t i = 0; i < count; ++i) {
    nd::Rng rng(nd::derive_seed(split_seed, i));
    render_sample(spec, patterns, rng, ds.images.data() + i * len, ds.labels[i]);
  }
  return ds;
}

}  // namespace

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::synthetic_a: return "synthetic_a";
    case DatasetKind::synthetic_b: return "synthetic_b";
    case DatasetKind::cifar10: return "cifar10";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(std::string_view s) {
  if (s == "synthetic_a") return DatasetKind::synthetic_a;
  if (s == "synthetic_b") return DatasetKind::synthetic_b;
  if (s == "cifar10") return DatasetKind::cifar10;
  throw ConfigError("unknown dataset kind '" + std::string(s) + "'");
}

void DatasetSpec::validate() const {
  if (kind == DatasetKind::cifar10) {
    if (path.empty()) throw ConfigError("cifar10 dataset needs a path");
    return;
  }
  if (image_size == 0 || num_classes == 0 || channels == 0) {
    throw ConfigError("dataset dimensions must be positive");
  }
  if (!(noise >= 0.0)) throw ConfigError("dataset noise must be >= 0");
}

std::size_t Dataset::image_len() const noexcept {
  return images.rank() == 4 ? images.dim(1) * images.dim(2) * images.dim(3) : 0;
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  nd::Shape shape = images.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  const std::size_t len = image_len();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw PreconditionError("dataset index out of range");
    std::copy_n(images.data() + indices[i] * len, len, out.data() + i * len);
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.images = gather(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  return out;
}

DatasetPair generate(const DatasetSpec& spec) {
  spec.validate();
  if (spec.kind == DatasetKind::cifar10) {
    return {load_cifar10(spec.path, CifarSplit::train), load_cifar10(spec.path, CifarSplit::test)};
  }
  const auto patterns = class_patterns(spec.kind, spec.num_classes, spec.channels);
  return {render_split(spec, patterns, 1, spec.num_train),
          render_split(spec, patterns, 2, spec.num_val)};
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= n) return idx;
  nd::Rng rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

BatchIterator::BatchIterator(std::shared_ptr<const Dataset> dataset, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed)
    : dataset_(std::move(dataset)), batch_size_(batch_size), shuffle_seed_(shuffle_seed) {
  if (!dataset_) throw PreconditionError("batch iterator without a dataset");
  if (batch_size_ == 0) throw PreconditionError("batch size must be positive");
  start_epoch();
}

void BatchIterator::start_epoch() {
  order_.resize(dataset_->size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_seed_) {
    nd::Rng rng(nd::derive_seed(*shuffle_seed_, epoch_));
    for (std::size_t i = order_.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(order_[i - 1], order_[j]);
    }
  }
  cursor_ = 0;
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ + batch_size_ > order_.size()) {
    ++epoch_;
    start_epoch();
    return false;
  }
  out.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                     order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += batch_size_;
  out.images = dataset_->gather(out.indices);
  out.labels.clear();
  for (std::size_t i : out.indices) out.labels.push_back(dataset_->labels[i]);
  return true;
}

void BatchIterator::reset() {
  epoch_ = 0;
  start_epoch();
}

std::size_t BatchIterator::batches_per_epoch() const noexcept {
  return dataset_->size() / batch_size_;
}

}  // namespace gplq::data
