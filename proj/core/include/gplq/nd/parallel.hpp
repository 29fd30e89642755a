// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <functional>

namespace gplq::nd {

// Worker count: GPLQ_THREADS if set and positive, else hardware concurrency.
std::size_t thread_count();

// Runs fn(i) for i in [0, n). Work items must write disjoint outputs; any
// reduction over the results is left to the caller in index order, which
// keeps results independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gplq::nd
