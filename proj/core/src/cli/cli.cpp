// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/cli/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gplq/cli/checkpoint.hpp"
#include "gplq/error.hpp"
#include "gplq/pipeline/experiments.hpp"
#include "gplq/pipeline/pipeline.hpp"

namespace gplq::cli {

namespace fs = std::filesystem;
using namespace gplq::pipeline;

pipeline::PipelineConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return config_from_json(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
}

fs::path run_directory(const fs::path& out, const pipeline::PipelineConfig& cfg) {
  return out / (config_hash(cfg) + "-s" + std::to_string(cfg.seed));
}

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  bool paper_scale = false;
  std::optional<int> bits;
  std::string ckpt;
  std::string experiment;
};

class Command {
 public:
  Command(const Options& o, std::ostream& out) : opts_(o), out_(out) {
    cfg_ = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    if (o.seed) cfg_.seed = *o.seed;
    if (o.paper_scale) apply_paper_scale(cfg_);
    if (o.bits) {
      cfg_.act.quantizer.bits = *o.bits;
      cfg_.weight.quantizer.bits = *o.bits;
    }
    cfg_.validate();
    dir_ = run_directory(o.out, cfg_);
  }

  int run(const std::string& name) {
    if (name == "train-teacher") return train_teacher();
    if (name == "calibrate") return calibrate();
    if (name == "act-qat") return act_qat();
    if (name == "weight-ptq") return weight_ptq();
    if (name == "pipeline") return full_pipeline();
    if (name == "eval") return eval();
    if (name == "probe") return probe();
    if (name == "experiment") return experiment();
    if (name == "report") return report();
    throw PreconditionError("unknown command '" + name + "'");
  }

 private:
  const Datasets& data() {
    if (!data_) data_ = make_datasets(cfg_);
    return *data_;
  }

  fs::path ckpt_or(const std::string& fallback) const {
    return opts_.ckpt.empty() ? dir_ / fallback : fs::path(opts_.ckpt);
  }

  Bundle load(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("checkpoint not found: '" + path.string() + "'");
    Bundle b = load_checkpoint(path);
    if (!(b.model.config() == cfg_.model)) {
      throw ConfigError("checkpoint '" + path.string() + "' does not match the configured model");
    }
    return b;
  }

  void write(const std::string& file, const std::string& text) {
    fs::create_directories(dir_);
    std::ofstream f(dir_ / file, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw IoError("cannot write '" + (dir_ / file).string() + "'");
  }

  void save(const Bundle& b, const std::string& file) {
    fs::create_directories(dir_);
    save_checkpoint(b, dir_ / file);
  }

  void emit(const std::string& stem, std::vector<StageReport> stages) {
    RunReport r;
    r.config_hash = config_hash(cfg_);
    r.seed = cfg_.seed;
    r.provenance = provenance(cfg_);
    r.stages = std::move(stages);
    write(stem + ".json", r.to_json());
    write(stem + ".timings.json", r.timings_json());
    write("config.json", to_json(cfg_));
    out_ << "wrote " << (dir_ / (stem + ".json")).string() << "\n";
  }

  void line(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    out_ << key << "=" << buf << "\n";
  }

  int train_teacher() {
    auto t = train_fp32_teacher(cfg_, data());
    save({t.model, {}, {}}, "teacher.ckpt");
    line("teacher_accuracy", t.report.metrics.at("accuracy"));
    emit("teacher", {t.report});
    return 0;
  }

  int calibrate() {
    Bundle teacher = load(ckpt_or("teacher.ckpt"));
    Bundle b{teacher.model, calibrate_activations(teacher.model, cfg_, data()), {}};
    StageReport r;
    r.stage = "calibrate";
    r.metrics["accuracy"] = evaluate(b.model, &b.hooks, *data().val_a);
    save(b, "calibrated.ckpt");
    line("w32a4_calibrated_accuracy", r.metrics["accuracy"]);
    emit("calibrate", {r});
    return 0;
  }

  int act_qat() {
    Bundle teacher = load(ckpt_or("teacher.ckpt"));
    auto r = run_act_qat(teacher.model, cfg_, data());
    save({r.w32a4.model, r.w32a4.hooks, r.pca}, "w32a4.ckpt");
    line("w32a4_accuracy", r.report.metrics.at("accuracy"));
    emit("act_qat", {r.report});
    return guard(r.report);
  }

  int weight_ptq() {
    Bundle w32a4 = load(ckpt_or("w32a4.ckpt"));
    auto r = run_weight_ptq({w32a4.model, w32a4.hooks}, cfg_, data());
    save({r.w4a4.model, r.w4a4.hooks, w32a4.pca}, "w4a4.ckpt");
    line("w4a4_accuracy", r.report.metrics.at("accuracy"));
    emit("weight_ptq", {r.report});
    return 0;
  }

  int full_pipeline() {
    TeacherResult teacher;
    if (opts_.ckpt.empty()) {
      teacher = train_fp32_teacher(cfg_, data());
    } else {
      teacher.model = load(opts_.ckpt).model;
      teacher.report.stage = "teacher";
      teacher.report.metrics["accuracy"] = evaluate(teacher.model, nullptr, *data().val_a);
    }
    save({teacher.model, {}, {}}, "teacher.ckpt");
    auto g = run_gplq(teacher.model, cfg_, data());
    save({g.stage1.w32a4.model, g.stage1.w32a4.hooks, g.stage1.pca}, "w32a4.ckpt");
    save({g.stage2.w4a4.model, g.stage2.w4a4.hooks, g.stage1.pca}, "w4a4.ckpt");
    line("teacher_accuracy", teacher.report.metrics.at("accuracy"));
    line("w32a4_accuracy", g.acc_w32a4);
    line("w4a4_accuracy", g.acc_w4a4);
    line("latent_fp32_accuracy", g.acc_latent);
    line("probe_accuracy", g.probe);
    emit("report", {teacher.report, g.stage1.report, g.stage2.report});
    return guard(g.stage1.report);
  }

  int eval() {
    Bundle b = load(ckpt_or("w4a4.ckpt"));
    line("accuracy", evaluate(b.model, &b.hooks, *data().val_a));
    return 0;
  }

  int probe() {
    Bundle b = load(ckpt_or("w4a4.ckpt"));
    line("probe_accuracy", linear_probe(b.model, &b.hooks, cfg_, data()));
    return 0;
  }

  int experiment() {
    const auto& names = experiment_names();
    if (std::find(names.begin(), names.end(), opts_.experiment) == names.end()) {
      throw PreconditionError("unknown experiment '" + opts_.experiment + "'");
    }
    Session session(cfg_);
    const fs::path cached = ckpt_or("teacher.ckpt");
    if (!opts_.ckpt.empty() || fs::exists(cached)) {
      session.set_teacher(load(cached).model);
    } else {
      save({session.teacher().model, {}, {}}, "teacher.ckpt");
    }
    auto r = run_experiment(opts_.experiment, session);
    write(opts_.experiment + ".csv", r.table.to_csv());
    r.report.config_hash = config_hash(cfg_);
    write(opts_.experiment + ".json", r.report.to_json());
    write(opts_.experiment + ".timings.json", r.report.timings_json());
    write("config.json", to_json(cfg_));
    out_ << r.table.to_csv();
    return 0;
  }

  int report() {
    if (!fs::is_directory(dir_)) throw IoError("run directory not found: '" + dir_.string() + "'");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir_)) {
      const auto name = e.path().filename().string();
      if (name.ends_with(".json") && !name.ends_with(".timings.json") && name != "config.json") {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f);
      const auto j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded() || !j.contains("stages")) continue;
      out_ << "# " << f.filename().string() << "\n";
      for (const auto& s : j["stages"]) {
        for (const auto& [k, v] : s["metrics"].items()) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
          out_ << s["stage"].get<std::string>() << "." << k << "=" << buf << "\n";
        }
      }
    }
    return 0;
  }

  int guard(const StageReport& r) {
    if (r.metrics.count("guard_passed") && r.metrics.at("guard_passed") == 0.0) {
      throw PipelineError("stage-1 loss exceeded the stability guard (peak ratio " +
                          std::to_string(r.metrics.at("peak_ratio")) + ")");
    }
    return 0;
  }

  Options opts_;
  std::ostream& out_;
  PipelineConfig cfg_;
  fs::path dir_;
  std::optional<Datasets> data_;
};

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
  if (dynamic_cast<const PipelineError*>(&e)) return "pipeline";
  return "internal";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GPLQ two-stage quantization on a tiny ViT", "gplq"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "JSON config file");
  app.add_option("--seed", o.seed, "master seed");
  app.add_option("--out", o.out, "output root")->capture_default_str();
  app.add_flag("--paper-scale", o.paper_scale, "use the full-scale stage-1 hyperparameters");
  app.add_option("--bits", o.bits, "bit-width for activations and weights")
      ->check(CLI::Range(2, 16));
  app.add_option("--ckpt", o.ckpt, "input checkpoint");

  app.add_subcommand("train-teacher", "train the FP32 teacher on task A");
  app.add_subcommand("calibrate", "calibration-only activation quantization of the teacher");
  app.add_subcommand("act-qat", "stage 1: activation-only QAT with PCA mimicking");
  app.add_subcommand("weight-ptq", "stage 2: weight PTQ with compensation");
  app.add_subcommand("pipeline", "teacher and both stages");
  app.add_subcommand("eval", "task-A accuracy of a checkpoint");
  app.add_subcommand("probe", "task-B linear-probe accuracy of a checkpoint");
  auto* exp = app.add_subcommand("experiment", "run a named experiment");
  exp->add_option("name", o.experiment, "experiment name")->required();
  app.add_subcommand("report", "summarize the reports in a run directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "gplq: error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    Command cmd(o, out);
    return cmd.run(name);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "gplq: error[" << error_kind(e) << "]: " << msg << "\n";
    return 1;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace gplq::cli
