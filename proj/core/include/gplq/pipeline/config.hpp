// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gplq/data/dataset.hpp"
#include "gplq/quant/quantizer.hpp"
#include "gplq/vit/model.hpp"

namespace gplq::pipeline {

enum class LossMode { pca_only, ce_only, ce_plus_pca };

std::string_view to_string(LossMode m);
LossMode loss_mode_from_string(std::string_view s);

struct TeacherConfig {
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  double weight_decay = 0.05;
  bool cosine_schedule = true;

  bool operator==(const TeacherConfig&) const = default;
};

struct ActQuantConfig {
  quant::QuantizerConfig quantizer{};
  // Empty selects vit::default_activation_sites.
  std::vector<std::string> sites;

  bool operator==(const ActQuantConfig&) const = default;
};

struct WeightQuantConfig {
  quant::QuantizerConfig quantizer{4, quant::Granularity::per_channel, quant::Role::weight};
  quant::ObserverKind observer = quant::ObserverKind::minmax;
  // Empty selects every linear layer except the patch embedding.
  std::vector<std::string> layers;

  bool operator==(const WeightQuantConfig&) const = default;
};

struct PcaConfig {
  double target_variance = 0.6;
  std::size_t round_multiple = 32;
  std::size_t fit_samples = 4096;
  std::optional<std::size_t> force_components;

  bool operator==(const PcaConfig&) const = default;
};

struct Stage1Config {
  std::size_t epochs = 1;
  double lr = 1e-4;
  std::size_t batch_size = 64;
  double weight_decay = 0.0;
  LossMode loss_mode = LossMode::ce_plus_pca;
  double pca_weight = 1.0;
  bool train_weights = true;
  std::size_t calib_samples = 512;
  // Fraction of each epoch's iterations actually run (data-volume sweep).
  double data_fraction = 1.0;
  double guard_ratio = 1.5;
  PcaConfig pca{};

  bool operator==(const Stage1Config&) const = default;
};

struct Stage2Config {
  std::size_t calib_samples = 512;
  double lambda_rel = 1e-6;
  bool qwt_enabled = true;
  bool augment_bias = false;
  std::vector<std::string> qwt_exclude;

  bool operator==(const Stage2Config&) const = default;
};

struct ProbeConfig {
  std::size_t epochs = 50;
  double lr = 1e-3;
  std::size_t batch_size = 64;

  bool operator==(const ProbeConfig&) const = default;
};

/// Everything a run depends on. Every random stream (datasets, init,
/// shuffling, calibration subsets, observers) is derived from `seed`.
struct PipelineConfig {
  vit::ModelConfig model{16, 4, 3, 64, 2, 2, 2, 10};
  data::DatasetSpec task_a{data::DatasetKind::synthetic_a, 0, 4096, 1024, 16, 10, 3, 1.5, {}};
  data::DatasetSpec task_b{data::DatasetKind::synthetic_b, 0, 2048, 1024, 16, 10, 3, 1.5, {}};
  TeacherConfig teacher{};
  ActQuantConfig act{};
  WeightQuantConfig weight{};
  Stage1Config stage1{};
  Stage2Config stage2{};
  ProbeConfig probe{};
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const PipelineConfig&) const = default;
};

// Stage-1 lr 5e-6, batch 16, probe for 100 epochs.
void apply_paper_scale(PipelineConfig& cfg);

std::vector<std::string> activation_sites(const PipelineConfig& cfg);
std::vector<std::string> weight_layers(const PipelineConfig& cfg);

// Canonical JSON (sorted keys, two-space indent). Parsing rejects unknown
// keys at every level; missing keys keep their defaults.
std::string to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(std::string_view text);

// FNV-1a 64 of the canonical JSON with the seed zeroed, as 16 hex digits.
std::string config_hash(const PipelineConfig& cfg);

}  // namespace gplq::pipeline
