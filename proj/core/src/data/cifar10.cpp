// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <vector>

#include "gplq/data/dataset.hpp"
#include "gplq/error.hpp"

namespace gplq::data {

namespace {

constexpr std::size_t kSide = 32;
constexpr std::size_t kPlane = kSide * kSide;

std::vector<unsigned char> read_batch_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 batch '" + file.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::size_t expected = kCifarRecordBytes * kCifarRecordsPerFile;
  if (bytes.size() != expected) {
    throw IoError("CIFAR-10 batch '" + file.string() + "' has " + std::to_string(bytes.size()) +
                  " bytes, expected " + std::to_string(expected));
  }
  for (std::size_t r = 0; r < kCifarRecordsPerFile; ++r) {
    if (bytes[r * kCifarRecordBytes] > 9) {
      throw IoError("CIFAR-10 batch '" + file.string() + "' has a label byte outside [0, 9]");
    }
  }
  return bytes;
}

std::vector<std::vector<unsigned char>> read_split(const std::filesystem::path& dir, CifarSplit split) {
  std::vector<std::vector<unsigned char>> files;
  if (split == CifarSplit::train) {
    for (int i = 1; i <= 5; ++i) {
      files.push_back(read_batch_file(dir / ("data_batch_" + std::to_string(i) + ".bin")));
    }
  } else {
    files.push_back(read_batch_file(dir / "test_batch.bin"));
  }
  return files;
}

}  // namespace

Dataset load_cifar10(const std::filesystem::path& dir, CifarSplit split) {
  const auto train = read_split(dir, CifarSplit::train);

  // Per-channel statistics over the training split, in [0, 1] pixel units.
  // Two passes: the one-pass E[x^2] - E[x]^2 form loses digits on bright channels.
  std::array<double, 3> mean{}, var{};
  auto each_pixel = [&](auto&& fn) {
    for (const auto& bytes : train) {
      for (std::size_t r = 0; r < kCifarRecordsPerFile; ++r) {
        const unsigned char* px = bytes.data() + r * kCifarRecordBytes + 1;
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t i = 0; i < kPlane; ++i) fn(c, px[c * kPlane + i] / 255.0);
        }
      }
    }
  };
  each_pixel([&](std::size_t c, double v) { mean[c] += v; });
  const std::size_t count = train.size() * kCifarRecordsPerFile * kPlane;
  for (double& m : mean) m /= static_cast<double>(count);
  each_pixel([&](std::size_t c, double v) { var[c] += (v - mean[c]) * (v - mean[c]); });
  std::array<double, 3> stddev{};
  for (std::size_t c = 0; c < 3; ++c) {
    stddev[c] = std::sqrt(std::max(var[c] / static_cast<double>(count), 1e-12));
  }

  const auto files = split == CifarSplit::train ? train : read_split(dir, CifarSplit::test);
  const std::size_t n = files.size() * kCifarRecordsPerFile;
  Dataset ds;
  ds.num_classes = 10;
  ds.images = Tensor({n, 3, kSide, kSide});
  ds.labels.resize(n);
  std::size_t idx = 0;
  for (const auto& bytes : files) {
    for (std::size_t r = 0; r < kCifarRecordsPerFile; ++r, ++idx) {
      const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
      ds.labels[idx] = rec[0];
      double* dst = ds.images.data() + idx * 3 * kPlane;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < kPlane; ++i)
          dst[c * kPlane + i] = (rec[1 + c * kPlane + i] / 255.0 - mean[c]) / stddev[c];
    }
  }
  return ds;
}

}  // namespace gplq::data
