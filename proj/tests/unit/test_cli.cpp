// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gplq/cli/checkpoint.hpp"
#include "gplq/cli/cli.hpp"
#include "gplq/error.hpp"
#include "gplq/pipeline/pipeline.hpp"

using namespace gplq;
using namespace gplq::cli;
namespace fs = std::filesystem;

namespace {

fs::path smoke_config() {
  const char* root = std::getenv("GPLQ_SOURCE_DIR");
  return fs::path(root ? root : ".") / "configs" / "smoke.json";
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gplq_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    args.insert(args.begin(), {"--config", smoke_config().string(), "--out", dir_.string()});
    return run_cli(args, out_, err_);
  }

  fs::path run_dir(std::uint64_t seed = 0) const {
    auto cfg = load_config(smoke_config());
    cfg.seed = seed;
    return run_directory(dir_, cfg);
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

Bundle sample_bundle() {
  const auto cfg = load_config(smoke_config());
  Bundle b{vit::Model::initialize(cfg.model, 4), {}, std::nullopt};
  quant::QuantizerConfig qc;
  qc.granularity = quant::Granularity::per_tensor;
  b.hooks.activations.emplace("blocks.0.fc1.in", quant::Quantizer{qc, {nd::Tensor::from_values({0.25}), true, false}});
  quant::QuantizerConfig wc{4, quant::Granularity::per_channel, quant::Role::weight};
  b.hooks.weights.emplace("head", quant::Quantizer{wc, {nd::Tensor({4}, 0.1), true, false}});
  qwt::CompensationLayer comp;
  comp.w_star = nd::Tensor({4, 16}, 0.01);
  comp.lambda_used = 1e-3;
  comp.target_layer = "head";
  comp.augmented_bias = nd::Tensor({4}, -0.5);
  b.hooks.compensations.emplace("head", comp);
  return b;
}

std::vector<std::uint8_t> encoded(const Bundle& b) { return encode_entries(bundle_entries(b)); }

// Reflected CRC-32 (polynomial 0xEDB88320), bit by bit.
std::uint32_t crc32_ref(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::uint8_t b : bytes) {
    c ^= b;
    for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
  }
  return ~c;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// One rank-1, single-element f64 entry.
std::vector<std::uint8_t> entry_bytes(const std::string& name, double value) {
  std::vector<std::uint8_t> out;
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  out.push_back(1);
  out.push_back(1);
  put_u32(out, 1);
  std::uint64_t bits;
  std::memcpy(&bits, &value, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  return out;
}

std::vector<std::uint8_t> file_bytes(std::uint32_t version, const std::vector<std::vector<std::uint8_t>>& entries) {
  std::vector<std::uint8_t> out{'G', 'P', 'L', 'Q', 'C', 'K', 'P', 'T'};
  put_u32(out, version);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) out.insert(out.end(), e.begin(), e.end());
  put_u32(out, crc32_ref(out));
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const Bundle b = sample_bundle();
  const auto bytes = encoded(b);
  const Bundle back = bundle_from_entries(decode_entries(bytes));
  EXPECT_EQ(back.model, b.model);
  EXPECT_EQ(back.hooks.activations.at("blocks.0.fc1.in").state.scale[0], 0.25);
  EXPECT_EQ(back.hooks.compensations.at("head").augmented_bias, b.hooks.compensations.at("head").augmented_bias);
  EXPECT_EQ(encoded(back), bytes);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = encode_entries({{"x", nd::Tensor::from_values({1.5}), DType::f64}});
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "GPLQCKPT");
  EXPECT_EQ(bytes[8], 1);   // version
  EXPECT_EQ(bytes[12], 1);  // entry count
  // 8 magic + 8 counts + (4 + 1 name) + 1 dtype + 1 rank + 4 dim + 8 data + 4 crc
  EXPECT_EQ(bytes.size(), 8u + 8 + 5 + 1 + 1 + 4 + 8 + 4);
  EXPECT_EQ(bytes, file_bytes(1, {entry_bytes("x", 1.5)}));
}

TEST(Checkpoint, Float32Entries) {
  const auto bytes = encode_entries({{"x", nd::Tensor::from_values({0.1, 2.0}), DType::f32}});
  const auto back = decode_entries(bytes);
  EXPECT_EQ(back[0].dtype, DType::f32);
  EXPECT_EQ(back[0].tensor[0], static_cast<double>(0.1f));
  EXPECT_EQ(back[0].tensor[1], 2.0);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto good = encoded(sample_bundle());
  auto truncated = good;
  truncated.resize(good.size() / 2);
  EXPECT_THROW(decode_entries(truncated), IoError);
  EXPECT_THROW(decode_entries(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)), IoError);

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  try {
    decode_entries(flipped);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("CRC"), std::string::npos) << e.what();
  }

  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_entries(magic), IoError);
}

TEST(Checkpoint, VersionAndDuplicateNames) {
  const std::vector<std::uint8_t> one = entry_bytes("x", 1.0);
  EXPECT_EQ(decode_entries(file_bytes(1, {one}))[0].tensor[0], 1.0);
  try {
    decode_entries(file_bytes(2, {one}));
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
  try {
    decode_entries(file_bytes(1, {one, entry_bytes("x", 2.0)}));
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(encode_entries({{"x", nd::Tensor::from_values({1.0}), DType::f64},
                               {"x", nd::Tensor::from_values({2.0}), DType::f64}}),
               Error);
}

TEST(Checkpoint, MissingEntriesAreReported) {
  auto entries = bundle_entries(sample_bundle());
  std::erase_if(entries, [](const Entry& e) { return e.name == "param.head.weight"; });
  EXPECT_THROW(bundle_from_entries(entries), IoError);
}

TEST_F(CliTest, CheckpointFilesAndAtomicSave) {
  const Bundle b = sample_bundle();
  const fs::path p = dir_ / "a.ckpt";
  save_checkpoint(b, p);
  EXPECT_EQ(load_checkpoint(p).model, b.model);
  EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
  try {
    load_checkpoint(dir_ / "missing.ckpt");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.ckpt"), std::string::npos);
  }
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({"--bits", "1", "eval"}), 2);
  EXPECT_EQ(run({"experiment"}), 2);
}

TEST_F(CliTest, ConfigErrorsUseOneLine) {
  std::ofstream(dir_ / "bad.json") << "{\"stage1\": {\"lr\": 1, \"oops\": 2}}";
  std::vector<std::string> args{"--config", (dir_ / "bad.json").string(), "--out", dir_.string(), "eval"};
  EXPECT_EQ(run_cli(args, out_, err_), 1);
  EXPECT_EQ(err_.str().rfind("gplq: error[config]: ", 0), 0u) << err_.str();
  EXPECT_NE(err_.str().find("oops"), std::string::npos);
  const std::string msg = err_.str();
  EXPECT_EQ(std::count(msg.begin(), msg.end(), '\n'), 1) << msg;
}

TEST_F(CliTest, EvalWithoutCheckpointNamesThePath) {
  EXPECT_EQ(run({"eval"}), 1);
  const std::string want = (run_dir() / "w4a4.ckpt").string();
  EXPECT_NE(err_.str().find("error[io]"), std::string::npos) << err_.str();
  EXPECT_NE(err_.str().find(want), std::string::npos) << err_.str();
}

TEST_F(CliTest, PipelineWritesReloadableArtifacts) {
  ASSERT_EQ(run({"pipeline"}), 0) << err_.str();
  const fs::path rd = run_dir();
  for (const char* f : {"report.json", "report.timings.json", "config.json", "teacher.ckpt", "w32a4.ckpt", "w4a4.ckpt"}) {
    EXPECT_TRUE(fs::exists(rd / f)) << f;
  }
  EXPECT_EQ(load_config(rd / "config.json"), load_config(smoke_config()));

  // Reloaded W4A4 evaluates to the accuracy the pipeline reported.
  const Bundle w4a4 = load_checkpoint(rd / "w4a4.ckpt");
  EXPECT_FALSE(w4a4.hooks.compensations.empty());
  auto cfg = load_config(smoke_config());
  const auto data = pipeline::make_datasets(cfg);
  const double acc = pipeline::evaluate(w4a4.model, &w4a4.hooks, *data.val_a);
  ASSERT_EQ(run({"eval"}), 0) << err_.str();
  std::ostringstream want;
  want << "accuracy=" << acc;
  EXPECT_NE(out_.str().find(want.str()), std::string::npos) << out_.str();

  ASSERT_EQ(run({"report"}), 0) << err_.str();
  EXPECT_NE(out_.str().find("weight_ptq.accuracy="), std::string::npos) << out_.str();
  ASSERT_EQ(run({"probe"}), 0) << err_.str();
  EXPECT_NE(out_.str().find("probe_accuracy="), std::string::npos) << out_.str();
}

TEST_F(CliTest, PipelineReportIsReproducible) {
  ASSERT_EQ(run({"pipeline"}), 0) << err_.str();
  const std::string first = slurp(run_dir() / "report.json");
  const std::string ckpt = slurp(run_dir() / "w4a4.ckpt");
  fs::remove_all(run_dir());
  ASSERT_EQ(run({"pipeline"}), 0) << err_.str();
  EXPECT_EQ(slurp(run_dir() / "report.json"), first);
  EXPECT_EQ(slurp(run_dir() / "w4a4.ckpt"), ckpt);
  EXPECT_EQ(first.find("wall_clock"), std::string::npos);
}

TEST_F(CliTest, StagesChainThroughCheckpoints) {
  ASSERT_EQ(run({"--seed", "5", "train-teacher"}), 0) << err_.str();
  ASSERT_EQ(run({"--seed", "5", "act-qat"}), 0) << err_.str();
  ASSERT_EQ(run({"--seed", "5", "weight-ptq"}), 0) << err_.str();
  EXPECT_TRUE(fs::exists(run_dir(5) / "w4a4.ckpt"));
  EXPECT_TRUE(fs::exists(run_dir(5) / "act_qat.json"));
  EXPECT_EQ(run({"--seed", "5", "weight-ptq", "--ckpt", (run_dir(5) / "teacher.ckpt").string()}), 1);
  EXPECT_NE(err_.str().find("error[precondition]"), std::string::npos) << err_.str();
}

TEST_F(CliTest, SensitivityExperimentCsv) {
  ASSERT_EQ(run({"--seed", "7", "experiment", "sensitivity"}), 0) << err_.str();
  const std::string csv = slurp(run_dir(7) / "sensitivity.csv");
  std::istringstream lines(csv);
  std::vector<std::string> rows;
  for (std::string l; std::getline(lines, l);) rows.push_back(l);
  ASSERT_EQ(rows.size(), 3u) << csv;
  EXPECT_EQ(rows[0], "setting,accuracy,drop");
  EXPECT_EQ(rows[1].rfind("W4A32,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("W32A4,", 0), 0u);
  EXPECT_TRUE(fs::exists(run_dir(7) / "teacher.ckpt"));
  EXPECT_EQ(run({"--seed", "7", "experiment", "nope"}), 1);
  EXPECT_NE(err_.str().find("error[precondition]"), std::string::npos) << err_.str();
}
