// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gplq/nd/rng.hpp"
#include "gplq/nd/tensor.hpp"

namespace gplq::data {

using nd::Tensor;

enum class DatasetKind { synthetic_a, synthetic_b, cifar10 };

std::string_view to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(std::string_view s);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic_a;
  std::uint64_t seed = 0;
  std::size_t num_train = 4096;
  std::size_t num_val = 1024;
  std::size_t image_size = 32;
  std::size_t num_classes = 10;
  std::size_t channels = 3;
  double noise = 0.6;
  std::filesystem::path path;  // cifar10 only

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

/// Images [N x C x H x W] with integer labels.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_len() const noexcept;
  // Copies the selected samples into a new [n x C x H x W] tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct DatasetPair {
  Dataset train;
  Dataset val;
};

/// Seeded synthetic textures. Every sample is drawn from its own RNG stream
/// keyed by (seed, split, index), so train and validation never share
/// draws and results do not depend on generation order.
DatasetPair generate(const DatasetSpec& spec);

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// Fixed-size batches over a dataset; the trailing partial batch is dropped.
/// With a shuffle seed, each epoch uses a fresh permutation derived from
/// (seed, epoch). reset() restarts at epoch 0.
class BatchIterator {
 public:
  BatchIterator(std::shared_ptr<const Dataset> dataset, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

  bool next(Batch& out);
  void reset();
  std::size_t batches_per_epoch() const noexcept;
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  void start_epoch();

  std::shared_ptr<const Dataset> dataset_;
  std::size_t batch_size_;
  std::optional<std::uint64_t> shuffle_seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

// Seeded sample of `count` distinct indices from [0, n) (all of them when count >= n).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::uint64_t seed);

enum class CifarSplit { train, test };

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

/// Reads the standard CIFAR-10 binary batches from `dir`
/// (data_batch_1..5.bin, test_batch.bin). Images are normalized with
/// per-channel mean/std computed over the training split.
Dataset load_cifar10(const std::filesystem::path& dir, CifarSplit split);

}  // namespace gplq::data
