// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace kvc {

/// Worker count: `requested` if > 0, else $KVC_THREADS if set, else 1.
int resolve_threads(int requested);

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index runs exactly once;
/// the first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace kvc
