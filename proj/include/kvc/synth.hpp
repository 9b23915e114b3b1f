// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvc/cache_io.hpp"
#include "kvc/querygen.hpp"

namespace kvc {

struct SynthOptions {
    std::uint64_t seed = 0;
    int layers = 1;
    int heads = 1;
    Eigen::Index length = 64;  // T
    Eigen::Index dim = 32;     // d
    Eigen::Index n_queries = 64;
    Eigen::Index n_heldout = 0;
    /// 0 draws i.i.d. keys; c > 0 emits c distinct key rows, each repeated T / c times in a
    /// contiguous block, with one value row per cluster.
    Eigen::Index clusters = 0;
    /// Query row norm; 0 selects sqrt(d).
    double query_norm = 0.0;

    void validate() const;
};

struct SynthData {
    CacheMeta meta;
    CacheMap cache;
    QueryMap queries;
    QueryMap heldout;
};

SynthData synth(const SynthOptions& options);

/// Seed for one (head, stream) pair, so heads and streams never share draws.
std::uint64_t derive_seed(std::uint64_t seed, const HeadId& id, std::uint64_t stream);

}  // namespace kvc
