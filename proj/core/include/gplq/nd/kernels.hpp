// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <span>

// Raw row-major GEMM kernels over spans. Every kernel uses a fixed loop order
// so results are bit-reproducible for a given build. Callers guarantee the
// span lengths; the kernels only assert in debug builds.
namespace gplq::nd::kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// c[m x n] (+)= a[k x m]^T * b[k x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

void transpose(std::span<const double> a, std::span<double> out, std::size_t rows,
               std::size_t cols);

}  // namespace gplq::nd::kernels
