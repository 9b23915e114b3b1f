// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

#include "kvc/attention.hpp"

namespace kvc {

/// Counter-based generator: the i-th draw is a pure function of (seed, i).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in [0, n), rejection-free via 128-bit multiply.
    std::uint64_t below(std::uint64_t n);
    double normal();

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// per_row: every row rescaled to norm target_norm.
/// mean_match: one global factor so the mean row norm equals target_norm.
enum class NormScaling { per_row, mean_match };

QuerySet gen_random_queries(Eigen::Index n, Eigen::Index d, double target_norm, std::uint64_t seed,
                            NormScaling scaling = NormScaling::per_row);

double mean_row_norm(const Matrix& m);

struct QueryBudget {
    std::int64_t cap = 50000;
    std::uint64_t seed = 0;
    void validate() const;
};

/// Streaming Algorithm-R reservoir over query rows.
class QueryReservoir {
public:
    QueryReservoir(Eigen::Index dim, const QueryBudget& budget);

    void push(std::span<const float> row);
    void push_rows(const Matrix& rows);
    std::int64_t seen() const { return seen_; }
    /// Kept rows in slot order; equals the stream order while seen() <= cap.
    Matrix rows() const;

private:
    Eigen::Index dim_;
    QueryBudget budget_;
    CounterRng rng_;
    std::int64_t seen_ = 0;
    std::vector<float> slots_;
};

QuerySet reservoir_subsample(const Matrix& stream, const QueryBudget& budget,
                             Provenance provenance = Provenance::random);

/// Concatenates in order and subsamples to the cap. Provenance is mixed unless there is one set.
QuerySet merge_query_sets(std::span<const QuerySet> sets, const QueryBudget& budget);

}  // namespace kvc
