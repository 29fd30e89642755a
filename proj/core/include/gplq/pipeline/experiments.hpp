// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gplq/pipeline/pipeline.hpp"

namespace gplq::pipeline {

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
};

struct ExperimentResult {
  Table table;
  RunReport report;
  std::map<std::string, double> metrics;
};

/// Shared state for a family of runs under one base config: the datasets,
/// the teacher, and memoized stage results keyed by the canonical JSON of
/// each config variant. Variants may change quantizer and stage settings
/// but not the model, data, teacher settings or seed.
class Session {
 public:
  explicit Session(PipelineConfig cfg);

  const PipelineConfig& config() const noexcept { return cfg_; }
  const Datasets& data() const noexcept { return data_; }

  // Trains the teacher on first use unless one was supplied.
  const TeacherResult& teacher();
  void set_teacher(vit::Model model, StageReport report = {});

  const GplqResult& gplq(const PipelineConfig& variant);
  const GplqResult& gplq() { return gplq(cfg_); }
  const DirectQatResult& direct(const PipelineConfig& variant);
  // Probe accuracy of the direct baseline's W4A4 model.
  double direct_probe(const PipelineConfig& variant);

 private:
  void check_variant(const PipelineConfig& variant) const;

  PipelineConfig cfg_;
  Datasets data_;
  std::optional<TeacherResult> teacher_;
  std::map<std::string, std::unique_ptr<GplqResult>> gplq_;
  std::map<std::string, std::unique_ptr<DirectQatResult>> direct_;
  std::map<std::string, double> direct_probe_;
};

const std::vector<std::string>& experiment_names();

ExperimentResult run_experiment(const std::string& name, Session& session);

}  // namespace gplq::pipeline
