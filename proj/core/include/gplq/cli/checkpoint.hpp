// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gplq/mimic/pca.hpp"
#include "gplq/nd/tensor.hpp"
#include "gplq/vit/model.hpp"

namespace gplq::cli {

inline constexpr char kCheckpointMagic[8] = {'G', 'P', 'L', 'Q', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct Entry {
  std::string name;
  nd::Tensor tensor;
  DType dtype = DType::f64;
};

/// Layout (all integers little-endian):
///   "GPLQCKPT" | u32 version | u32 count |
///   count x { u32 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | data } |
///   u32 crc32 of every preceding byte
std::vector<std::uint8_t> encode_entries(const std::vector<Entry>& entries);
std::vector<Entry> decode_entries(std::span<const std::uint8_t> bytes);

/// A model plus everything the stages attach to it.
struct Bundle {
  vit::Model model;
  vit::QuantHooks hooks;
  std::optional<mimic::PcaSubspace> pca;
};

std::vector<Entry> bundle_entries(const Bundle& bundle);
Bundle bundle_from_entries(const std::vector<Entry>& entries);

// Writes via a temporary file and rename, so a failed write never leaves a
// partial checkpoint at `path`.
void save_checkpoint(const Bundle& bundle, const std::filesystem::path& path);
Bundle load_checkpoint(const std::filesystem::path& path);

}  // namespace gplq::cli
