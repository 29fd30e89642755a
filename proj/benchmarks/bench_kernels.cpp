// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include <vector>

#include <benchmark/benchmark.h>

#include "gplq/nd/kernels.hpp"
#include "gplq/nd/linalg.hpp"
#include "gplq/nd/rng.hpp"
#include "gplq/quant/quantizer.hpp"
#include "gplq/vit/forward.hpp"
#include "gplq/vit/model.hpp"

using namespace gplq;

namespace {

nd::Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  nd::Rng rng(seed);
  nd::Tensor t({rows, cols});
  for (double& v : t.values()) v = rng.normal(0.0, 1.0);
  return t;
}

void BM_GemmNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1);
  const auto b = random_matrix(n, n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    nd::kernels::gemm_nn(a.values(), b.values(), c, n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_GemmNN)->Arg(64)->Arg(128)->Arg(256);

void BM_FakeQuantize(benchmark::State& state) {
  const auto gran = static_cast<quant::Granularity>(state.range(0));
  const auto x = random_matrix(1024, 96, 3);
  quant::QuantizerConfig cfg;
  cfg.granularity = gran;
  quant::QuantizerState st;
  st.scale = nd::Tensor({quant::slice_count(x, cfg)});
  for (double& v : st.scale.values()) v = 0.25;
  for (auto _ : state) benchmark::DoNotOptimize(quant::fake_quantize(x, st, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(x.size()));
  state.SetLabel(std::string(quant::to_string(gran)));
}
BENCHMARK(BM_FakeQuantize)
    ->Arg(static_cast<int>(quant::Granularity::per_tensor))
    ->Arg(static_cast<int>(quant::Granularity::per_channel))
    ->Arg(static_cast<int>(quant::Granularity::per_token));

void BM_SymEig(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto f = random_matrix(2 * d, d, 4);
  nd::Tensor cov({d, d});
  nd::kernels::gemm_tn(f.values(), f.values(), cov.values(), d, 2 * d, d, false);
  for (auto _ : state) benchmark::DoNotOptimize(nd::sym_eig(cov));
}
BENCHMARK(BM_SymEig)->Arg(32)->Arg(96)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  vit::ModelConfig mc;
  mc.embed_dim = 64;
  mc.depth = 4;
  mc.heads = 4;
  mc.mlp_ratio = 2;
  mc.image_size = 16;
  const auto model = vit::Model::initialize(mc, 5);
  nd::Rng rng(6);
  nd::Tensor batch({32, mc.in_channels, mc.image_size, mc.image_size});
  for (double& v : batch.values()) v = rng.normal(0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(vit::forward(model, batch));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
