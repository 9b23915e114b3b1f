// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "kvc/compaction.hpp"
#include "kvc/container.hpp"

namespace kvc {

/// Cache-level metadata shared by every head of a container.
struct CacheMeta {
    int head_dim = 0;
    int num_layers = 0;
    int kv_heads_per_layer = 0;
    double logit_scale = 0.0;
    RopeParams rope;
    std::int64_t logical_length = 0;

    static CacheMeta from(const Manifest& m);
    Manifest manifest() const;
};

/// Heads stored either raw (K, V) or compacted (Ck, Cv, beta). Positions default to 0..T-1.
CacheMap cache_from_container(const Container& c);
/// Every head with a Q tensor. Provenance and seed come from manifest attributes.
QueryMap queries_from_container(const Container& c);
CompactMap compact_from_container(const Container& c);

Container cache_to_container(const CacheMeta& meta, const CacheMap& cache, const QueryMap* queries = nullptr);
Container queries_to_container(const CacheMeta& meta, const QueryMap& queries);
/// Ck, Cv, beta and positions in the head's storage dtype (positions always f32), plus
/// f32 source indices when known.
Container compact_to_container(const CacheMeta& meta, const CompactMap& compact);

void save(const Container& c, const std::filesystem::path& path);

}  // namespace kvc
