// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "kvc/budget.hpp"
#include "kvc/compaction.hpp"
#include "kvc/parallel.hpp"
#include "kvc/synth.hpp"

using namespace kvc;

TEST_CASE("parallel_for runs every index exactly once") {
    for (int threads : {1, 2, 3, 8, 64}) {
        std::vector<std::atomic<int>> hits(97);
        parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
        for (const auto& h : hits) CHECK(h.load() == 1);
    }
    int calls = 0;
    parallel_for(0, 4, [&](std::size_t) { ++calls; });
    CHECK(calls == 0);
}

TEST_CASE("parallel_for rethrows after joining") {
    std::atomic<int> done{0};
    CHECK_THROWS_AS(parallel_for(50, 4,
                                 [&](std::size_t i) {
                                     if (i == 7) throw std::runtime_error("boom");
                                     ++done;
                                 }),
                    std::runtime_error);
    CHECK(done.load() == 49);
}

TEST_CASE("resolve_threads") {
    CHECK(resolve_threads(3) == 3);
    ::setenv("KVC_THREADS", "5", 1);
    CHECK(resolve_threads(0) == 5);
    ::setenv("KVC_THREADS", "junk", 1);
    CHECK(resolve_threads(0) == 1);
    ::unsetenv("KVC_THREADS");
    CHECK(resolve_threads(0) == 1);
}

TEST_CASE("compaction and sensitivity are bit-identical across thread counts") {
    SynthOptions o;
    o.seed = 3;
    o.layers = 2;
    o.heads = 3;
    o.length = 48;
    o.dim = 16;
    o.n_queries = 40;
    o.n_heldout = 20;
    const auto data = synth(o);
    for (auto m : {Method::omp, Method::omp_fast, Method::highest_attention}) {
        auto cfg = CompactionConfig::preset(m);
        cfg.ratio = 0.2;
        const auto one = compact_cache(data.cache, data.queries, std::nullopt, cfg, 1);
        for (int threads : {2, 7}) {
            const auto many = compact_cache(data.cache, data.queries, std::nullopt, cfg, threads);
            for (const auto& [id, c] : one) {
                CHECK(many.at(id).keys == c.keys);
                CHECK(many.at(id).values == c.values);
                CHECK(many.at(id).bias == c.bias);
                CHECK(many.at(id).source_indices == c.source_indices);
            }
        }
    }
    const std::vector<double> grid{0.05, 0.1, 0.5, 1.0};
    const auto cfg = CompactionConfig::preset(Method::omp);
    const auto a = measure_sensitivity(data.cache, data.queries, data.heldout, {1, 2}, grid, 0.1, cfg, 1);
    const auto b = measure_sensitivity(data.cache, data.queries, data.heldout, {1, 2}, grid, 0.1, cfg, 4);
    CHECK(a.loss == b.loss);
}
