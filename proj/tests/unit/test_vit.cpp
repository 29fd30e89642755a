// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "gplq/error.hpp"
#include "gplq/nd/rng.hpp"
#include "gplq/vit/forward.hpp"
#include "gplq/vit/train.hpp"

using namespace gplq;
using namespace gplq::vit;
using nd::Tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.in_channels = 2;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.num_classes = 3;
  return c;
}

// Init with every parameter (LN affine included) perturbed so no gradient
// path is trivially zero.
Model random_model(const ModelConfig& c, std::uint64_t seed) {
  Model m = Model::initialize(c, seed);
  nd::Rng rng(seed + 100);
  for (auto& [name, p] : m.params()) {
    for (double& v : p.values()) v += rng.normal(0.0, 0.2);
  }
  return m;
}

Tensor random_images(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  nd::Rng rng(seed);
  Tensor x({n, c.in_channels, c.image_size, c.image_size});
  for (double& v : x.values()) v = rng.normal();
  return x;
}

// Straightforward reference forward written from the architecture
// description, with its own index arithmetic.
struct Oracle {
  const Model& m;
  using Mat = std::vector<std::vector<double>>;

  Mat linear(const Mat& x, const std::string& name) const {
    const Tensor& w = m.param(name + ".weight");
    const Tensor& b = m.param(name + ".bias");
    Mat y(x.size(), std::vector<double>(w.dim(0)));
    for (std::size_t r = 0; r < x.size(); ++r)
      for (std::size_t o = 0; o < w.dim(0); ++o) {
        double s = b[o];
        for (std::size_t i = 0; i < w.dim(1); ++i) s += w(o, i) * x[r][i];
        y[r][o] = s;
      }
    return y;
  }

  Mat norm(const Mat& x, const std::string& name) const {
    Mat y = x;
    for (auto& row : y) {
      const double n = static_cast<double>(row.size());
      const double mu = std::accumulate(row.begin(), row.end(), 0.0) / n;
      double var = 0.0;
      for (double v : row) var += (v - mu) * (v - mu) / n;
      for (std::size_t c = 0; c < row.size(); ++c) {
        row[c] = m.param(name + ".gamma")[c] * (row[c] - mu) / std::sqrt(var + 1e-6) +
                 m.param(name + ".beta")[c];
      }
    }
    return y;
  }

  static double gelu(double u) {
    return 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
  }

  std::vector<double> logits(const Tensor& images, std::size_t n) const {
    const auto& c = m.config();
    const std::size_t g = c.grid(), p = c.patch_size, d = c.embed_dim, hd = c.head_dim();
    Mat patches;
    for (std::size_t gy = 0; gy < g; ++gy)
      for (std::size_t gx = 0; gx < g; ++gx) {
        std::vector<double> v;
        for (std::size_t ch = 0; ch < c.in_channels; ++ch)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x)
              v.push_back(images[((n * c.in_channels + ch) * c.image_size + gy * p + y) * c.image_size + gx * p + x]);
        patches.push_back(v);
      }
    Mat x = linear(patches, "patch_embed");
    const std::size_t T = x.size();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < d; ++k) x[t][k] += m.param("pos_embed")(t, k);
    for (std::size_t b = 0; b < c.depth; ++b) {
      const std::string pre = "blocks." + std::to_string(b);
      const Mat qkv = linear(norm(x, pre + ".ln1"), pre + ".qkv");
      Mat o(T, std::vector<double>(d, 0.0));
      for (std::size_t h = 0; h < c.heads; ++h)
        for (std::size_t i = 0; i < T; ++i) {
          std::vector<double> s(T);
          for (std::size_t j = 0; j < T; ++j) {
            for (std::size_t k = 0; k < hd; ++k) s[j] += qkv[i][h * hd + k] * qkv[j][d + h * hd + k];
            s[j] /= std::sqrt(static_cast<double>(hd));
          }
          const double mx = *std::max_element(s.begin(), s.end());
          double z = 0.0;
          for (double& v : s) z += (v = std::exp(v - mx));
          for (std::size_t j = 0; j < T; ++j)
            for (std::size_t k = 0; k < hd; ++k) o[i][h * hd + k] += s[j] / z * qkv[j][2 * d + h * hd + k];
        }
      const Mat a = linear(o, pre + ".proj");
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < d; ++k) x[t][k] += a[t][k];
      Mat u = linear(norm(x, pre + ".ln2"), pre + ".fc1");
      for (auto& row : u)
        for (double& v : row) v = gelu(v);
      const Mat f = linear(u, pre + ".fc2");
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < d; ++k) x[t][k] += f[t][k];
    }
    const Mat z = norm(x, "ln_final");
    Mat pooled(1, std::vector<double>(d, 0.0));
    for (const auto& row : z)
      for (std::size_t k = 0; k < d; ++k) pooled[0][k] += row[k] / static_cast<double>(T);
    return linear(pooled, "head")[0];
  }
};

// Scalar objective used by the gradient checks: CE on the logits plus a
// fixed linear functional of the pooled features.
double objective(const Model& m, const Tensor& x, const std::vector<int>& labels, const Tensor& r) {
  const auto out = forward(m, x);
  double s = cross_entropy(out.logits, labels).loss;
  for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * out.features[i];
  return s;
}

}  // namespace

TEST(Model, ParameterShapes) {
  const Model m(tiny_config());
  EXPECT_EQ(m.param("patch_embed.weight").shape(), (nd::Shape{8, 8}));
  EXPECT_EQ(m.param("pos_embed").shape(), (nd::Shape{4, 8}));
  EXPECT_EQ(m.param("blocks.0.qkv.weight").shape(), (nd::Shape{24, 8}));
  EXPECT_EQ(m.param("blocks.0.fc1.weight").shape(), (nd::Shape{16, 8}));
  EXPECT_EQ(m.param("blocks.0.fc2.weight").shape(), (nd::Shape{8, 16}));
  EXPECT_EQ(m.param("head.weight").shape(), (nd::Shape{3, 8}));
  EXPECT_EQ(m.param("ln_final.gamma")[0], 1.0);
  EXPECT_EQ(m.params().size(), 19u);
  EXPECT_THROW(m.param("nope"), PreconditionError);
  EXPECT_EQ(m.linear_layers(),
            (std::vector<std::string>{"patch_embed", "blocks.0.qkv", "blocks.0.proj", "blocks.0.fc1",
                                      "blocks.0.fc2", "head"}));
  EXPECT_TRUE(m.has_site("blocks.0.attn.p"));
  EXPECT_FALSE(m.has_site("blocks.1.attn.p"));
}

TEST(Model, ConfigValidation) {
  ModelConfig c = tiny_config();
  c.patch_size = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.depth = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, InitializeIsSeeded) {
  EXPECT_EQ(Model::initialize(tiny_config(), 3), Model::initialize(tiny_config(), 3));
  EXPECT_NE(Model::initialize(tiny_config(), 3), Model::initialize(tiny_config(), 4));
}

TEST(Forward, ZeroModelEmitsHeadBias) {
  Model m(tiny_config());
  m.param("head.bias") = Tensor::from_values({1.0, -2.0, 0.5});
  const auto out = forward(m, random_images(tiny_config(), 2, 1));
  for (std::size_t n = 0; n < 2; ++n) {
    EXPECT_EQ(out.logits(n, 0), 1.0);
    EXPECT_EQ(out.logits(n, 1), -2.0);
    EXPECT_EQ(out.logits(n, 2), 0.5);
  }
}

TEST(Forward, MatchesReferenceImplementation) {
  for (std::size_t depth : {1u, 2u}) {
    ModelConfig c = tiny_config();
    c.depth = depth;
    const Model m = random_model(c, 7 + depth);
    const Tensor x = random_images(c, 3, 2);
    const auto out = forward(m, x);
    const Oracle oracle{m};
    for (std::size_t n = 0; n < 3; ++n) {
      const auto want = oracle.logits(x, n);
      for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(out.logits(n, k), want[k], 1e-10);
    }
  }
}

TEST(Forward, SamplesAreIndependent) {
  const Model m = random_model(tiny_config(), 5);
  const Tensor x = random_images(tiny_config(), 4, 9);
  const auto all = forward(m, x);
  for (std::size_t n = 0; n < 4; ++n) {
    Tensor one({1, 2, 4, 4});
    std::copy_n(x.data() + n * 32, 32, one.data());
    const auto single = forward(m, one);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(single.logits(0, k), all.logits(n, k));
  }
}

TEST(Forward, RejectsBadInput) {
  const Model m(tiny_config());
  EXPECT_THROW(forward(m, Tensor({2, 3, 4, 4})), ShapeError);
  vit::QuantHooks hooks;
  quant::QuantizerConfig qc;
  hooks.activations.emplace("blocks.9.fc1.in", quant::Quantizer{qc, {Tensor::from_values({1.0}), true, false}});
  EXPECT_THROW(forward(m, Tensor({1, 2, 4, 4}), &hooks), PreconditionError);
}

TEST(Forward, SixteenBitHooksAreNearIdentity) {
  const ModelConfig c = tiny_config();
  const Model m = random_model(c, 5);
  const Tensor x = random_images(c, 2, 9);
  QuantHooks hooks;
  quant::QuantizerConfig qc;
  qc.bits = 16;
  qc.granularity = quant::Granularity::per_tensor;
  for (const auto& site : default_activation_sites(c)) {
    hooks.activations.emplace(site, quant::Quantizer{qc, {Tensor::from_values({1e-3}), true, false}});
  }
  const auto ref = forward(m, x);
  const auto q = forward(m, x, &hooks);
  for (std::size_t i = 0; i < ref.logits.size(); ++i) EXPECT_NEAR(q.logits[i], ref.logits[i], 5e-3);
  EXPECT_NE(q.logits, ref.logits);
}

TEST(Backward, MatchesFiniteDifferences) {
  const ModelConfig c = tiny_config();
  Model m = random_model(c, 21);
  const Tensor x = random_images(c, 3, 4);
  const std::vector<int> labels{0, 2, 1};
  nd::Rng rng(3);
  Tensor r({3, c.embed_dim});
  for (double& v : r.values()) v = rng.normal(0.0, 0.5);

  const auto out = forward(m, x, nullptr, true);
  const auto ce = cross_entropy(out.logits, labels);
  const Gradients g = backward(*out.tape, ce.grad, &r);

  const double h = 1e-5;
  double worst = 0.0;
  for (auto& [name, p] : m.params()) {
    const Tensor& analytic = g.params.at(name);
    ASSERT_EQ(analytic.shape(), p.shape()) << name;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = objective(m, x, labels, r);
      p[i] = keep - h;
      const double down = objective(m, x, labels, r);
      p[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double rel = std::abs(numeric - analytic[i]) /
                         std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-4) << name << "[" << i << "] numeric " << numeric << " analytic "
                           << analytic[i];
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Backward, TapeIsSingleUse) {
  const Model m = random_model(tiny_config(), 1);
  const auto out = forward(m, random_images(tiny_config(), 1, 1), nullptr, true);
  const Tensor dl({1, 3}, 1.0);
  backward(*out.tape, dl);
  EXPECT_THROW(backward(*out.tape, dl), PreconditionError);
}

TEST(Backward, LearnableQuantizersGetScaleGradients) {
  const ModelConfig c = tiny_config();
  const Model m = random_model(c, 2);
  QuantHooks hooks;
  quant::QuantizerConfig qc;
  qc.bits = 4;
  qc.granularity = quant::Granularity::per_tensor;
  hooks.activations.emplace("blocks.0.fc1.in", quant::Quantizer{qc, {Tensor::from_values({0.2}), false, true}});
  hooks.activations.emplace("blocks.0.fc2.in", quant::Quantizer{qc, {Tensor::from_values({0.2}), true, true}});
  const auto out = forward(m, random_images(c, 2, 3), &hooks, true);
  const auto g = backward(*out.tape, cross_entropy(out.logits, std::vector<int>{0, 1}).grad);
  ASSERT_TRUE(g.act_scales.count("blocks.0.fc1.in"));
  EXPECT_NE(g.act_scales.at("blocks.0.fc1.in")[0], 0.0);
  EXPECT_FALSE(g.act_scales.count("blocks.0.fc2.in"));
}

TEST(CrossEntropy, UniformLogits) {
  const Tensor logits({2, 4});
  const auto ce = cross_entropy(logits, std::vector<int>{1, 3});
  EXPECT_NEAR(ce.loss, std::log(4.0), 1e-15);
  EXPECT_DOUBLE_EQ(ce.grad(0, 0), 0.125);
  EXPECT_DOUBLE_EQ(ce.grad(0, 1), -0.375);
  EXPECT_DOUBLE_EQ(ce.grad(1, 3), -0.375);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
  const auto ce = cross_entropy(Tensor::matrix({{1000.0, 0.0}}), std::vector<int>{1});
  EXPECT_NEAR(ce.loss, 1000.0, 1e-9);
  EXPECT_NEAR(ce.grad(0, 0), 1.0, 1e-12);
}

TEST(CrossEntropy, Errors) {
  EXPECT_THROW(cross_entropy(Tensor({2, 3}), std::vector<int>{0}), ShapeError);
  EXPECT_THROW(cross_entropy(Tensor({1, 3}), std::vector<int>{3}), PreconditionError);
  EXPECT_THROW(cross_entropy(Tensor({0, 3}), std::vector<int>{}), PreconditionError);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::from_values({1.0, -1.0, 0.5});
  AdamSlot slot;
  adamw_step(p, Tensor::from_values({0.3, -2.0, 0.0}), slot, {0.1, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_NEAR(p[0], 0.9, 1e-8);
  EXPECT_NEAR(p[1], -0.9, 1e-8);
  EXPECT_EQ(p[2], 0.5);
}

TEST(AdamW, DecoupledDecay) {
  Tensor p = Tensor::from_values({2.0});
  AdamSlot slot;
  adamw_step(p, Tensor::from_values({0.0}), slot, {0.1, 0.9, 0.999, 1e-8, 0.5});
  EXPECT_DOUBLE_EQ(p[0], 2.0 - 0.1 * 0.5 * 2.0);
  Tensor q = Tensor::from_values({2.0});
  AdamSlot other;
  adamw_step(q, Tensor::from_values({0.0}), other, {0.1, 0.9, 0.999, 1e-8, 0.5}, false);
  EXPECT_EQ(q[0], 2.0);
}

TEST(AdamW, SecondStepBiasCorrection) {
  // Hand-computed: m = [0.1g1 ; 0.09g1 + 0.1g2], v likewise with 0.001.
  Tensor p = Tensor::from_values({0.0});
  AdamSlot slot;
  const AdamWConfig cfg{0.01, 0.9, 0.999, 0.0, 0.0};
  adamw_step(p, Tensor::from_values({1.0}), slot, cfg);
  adamw_step(p, Tensor::from_values({3.0}), slot, cfg);
  const double m = (0.09 * 1.0 + 0.1 * 3.0) / (1 - 0.81);
  const double v = (0.999 * 0.001 * 1.0 + 0.001 * 9.0) / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[0], -0.01 - 0.01 * m / std::sqrt(v), 1e-15);
  EXPECT_EQ(slot.step, 2);
}

TEST(AdamW, ZeroLearningRateIsNoOp) {
  AdamW opt({0.0, 0.9, 0.999, 1e-8, 0.05});
  Tensor p = Tensor::from_values({1.0, 2.0});
  opt.step("w", p, Tensor::from_values({5.0, -5.0}));
  EXPECT_EQ(p, Tensor::from_values({1.0, 2.0}));
}
