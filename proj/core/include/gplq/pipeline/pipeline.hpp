// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gplq/data/dataset.hpp"
#include "gplq/error.hpp"
#include "gplq/mimic/pca.hpp"
#include "gplq/pipeline/config.hpp"
#include "gplq/vit/model.hpp"

namespace gplq::pipeline {

struct StageReport {
  std::string stage;
  std::map<std::string, double> metrics;
  std::vector<double> loss_curve;
  std::map<std::string, double> layer_errors;  // relative Frobenius weight error
  double wall_clock_s = 0.0;                   // kept out of the JSON report
};

struct RunReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string provenance;
  std::vector<StageReport> stages;

  const StageReport& stage(const std::string& name) const;
  // Deterministic JSON; wall-clock is emitted separately by timings_json.
  std::string to_json() const;
  std::string timings_json() const;
};

// "gplq <version> config=<hash> seed=<seed>".
std::string provenance(const PipelineConfig& cfg);

struct Datasets {
  std::shared_ptr<const data::Dataset> train_a, val_a, train_b, val_b;
};

Datasets make_datasets(const PipelineConfig& cfg);

struct QuantModel {
  vit::Model model;
  vit::QuantHooks hooks;
};

// Top-1 accuracy in percent.
double evaluate(const vit::Model& model, const vit::QuantHooks* hooks, const data::Dataset& ds);

struct TeacherResult {
  vit::Model model;
  StageReport report;
};

TeacherResult train_fp32_teacher(const PipelineConfig& cfg, const Datasets& data);

/// Calibration-only activation quantizers on a seeded subset of task A,
/// observed on the unquantized model. `observer` overrides the
/// per-granularity default observer kind.
vit::QuantHooks calibrate_activations(const vit::Model& model, const PipelineConfig& cfg,
                                      const Datasets& data,
                                      std::optional<quant::ObserverKind> observer = std::nullopt);

/// Weight quantizers for `layers` computed directly from the weights.
std::map<std::string, quant::Quantizer> quantize_weights(const vit::Model& model,
                                                         const WeightQuantConfig& wq,
                                                         const std::vector<std::string>& layers);

struct ActQatResult {
  QuantModel w32a4;
  std::optional<mimic::PcaSubspace> pca;
  StageReport report;
};

/// Stage 1: calibrate, fit the PCA subspace on teacher features, train the
/// activation-quantized student, then freeze its activation quantizers.
/// metrics["guard_passed"] is 0 when the loss ever exceeded guard_ratio x
/// its initial value.
ActQatResult run_act_qat(const vit::Model& teacher, const PipelineConfig& cfg,
                         const Datasets& data);

struct WeightPtqResult {
  QuantModel w4a4;  // with compensation when qwt_enabled
  StageReport report;
};

/// Stage 2: per layer in forward order, quantize weights and, when enabled,
/// solve the compensation layer on calibration activations propagated
/// through the already quantized prefix.
WeightPtqResult run_weight_ptq(const QuantModel& w32a4, const PipelineConfig& cfg,
                               const Datasets& data);

struct DirectQatResult {
  QuantModel w4a4;
  StageReport report;
};

/// Baseline: one run of simultaneous W4A4 QAT with learnable weight scales
/// and the same stage-1 hyperparameters; no stability guard.
DirectQatResult run_direct_qat(const vit::Model& teacher, const PipelineConfig& cfg,
                               const Datasets& data);

/// Drops every quantization hook and returns the underlying FP32 model.
vit::Model extract_latent_fp32(const QuantModel& model);

/// Trains a zero-initialized linear head on frozen penultimate features of
/// task B and returns its validation accuracy in percent.
double linear_probe(const vit::Model& model, const vit::QuantHooks* hooks, const PipelineConfig& cfg,
                    const Datasets& data);

struct GplqResult {
  ActQatResult stage1;
  WeightPtqResult stage2;
  double acc_w32a4 = 0.0;
  double acc_w4a4_no_qwt = 0.0;
  double acc_w4a4 = 0.0;
  double acc_latent = 0.0;
  double probe = 0.0;
};

GplqResult run_gplq(const vit::Model& teacher, const PipelineConfig& cfg, const Datasets& data);

class PipelineError : public Error {
 public:
  using Error::Error;
};

}  // namespace gplq::pipeline
