// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/querygen.hpp"

#include <cmath>
#include <numbers>

#include "kvc/error.hpp"

namespace kvc {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t CounterRng::next_u64() {
    return splitmix64(splitmix64(seed_) ^ counter_++);
}

double CounterRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t CounterRng::below(std::uint64_t n) {
    require(n > 0, "CounterRng::below needs n > 0");
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double CounterRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

double mean_row_norm(const Matrix& m) {
    if (m.rows() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) total += m.row(i).cast<double>().norm();
    return total / static_cast<double>(m.rows());
}

QuerySet gen_random_queries(Eigen::Index n, Eigen::Index d, double target_norm, std::uint64_t seed,
                            NormScaling scaling) {
    require(n >= 1 && d >= 1, "gen_random_queries needs n, d >= 1");
    require(target_norm > 0.0 && std::isfinite(target_norm), "target_norm must be positive");
    CounterRng rng(seed);
    MatrixD raw(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) raw(i, j) = rng.normal();

    if (scaling == NormScaling::per_row) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double norm = raw.row(i).norm();
            raw.row(i) *= norm > 0.0 ? target_norm / norm : 0.0;
        }
    } else {
        double mean = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) mean += raw.row(i).norm();
        mean /= static_cast<double>(n);
        raw *= target_norm / mean;
    }

    QuerySet q;
    q.queries = raw.cast<float>();
    q.provenance = Provenance::random;
    q.seed = seed;
    return q;
}

void QueryBudget::validate() const {
    require(cap >= 1, "query cap must be at least 1");
}

QueryReservoir::QueryReservoir(Eigen::Index dim, const QueryBudget& budget)
    : dim_(dim), budget_(budget), rng_(budget.seed) {
    budget.validate();
    require(dim >= 1, "query dimension must be at least 1");
}

void QueryReservoir::push(std::span<const float> row) {
    require(static_cast<Eigen::Index>(row.size()) == dim_, "query row has the wrong dimension");
    const auto width = static_cast<std::size_t>(dim_);
    if (seen_ < budget_.cap) {
        slots_.insert(slots_.end(), row.begin(), row.end());
    } else {
        const auto j = static_cast<std::int64_t>(rng_.below(static_cast<std::uint64_t>(seen_ + 1)));
        if (j < budget_.cap) std::copy(row.begin(), row.end(), slots_.begin() + static_cast<std::ptrdiff_t>(j * width));
    }
    ++seen_;
}

void QueryReservoir::push_rows(const Matrix& rows) {
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        push(std::span<const float>(rows.data() + i * rows.cols(), static_cast<std::size_t>(rows.cols())));
}

Matrix QueryReservoir::rows() const {
    const auto n = static_cast<Eigen::Index>(slots_.size()) / dim_;
    return Eigen::Map<const Matrix>(slots_.data(), n, dim_);
}

QuerySet reservoir_subsample(const Matrix& stream, const QueryBudget& budget, Provenance provenance) {
    budget.validate();
    QuerySet q;
    q.provenance = provenance;
    q.seed = budget.seed;
    if (stream.rows() <= budget.cap) {
        q.queries = stream;
        return q;
    }
    QueryReservoir r(stream.cols(), budget);
    r.push_rows(stream);
    q.queries = r.rows();
    return q;
}

QuerySet merge_query_sets(std::span<const QuerySet> sets, const QueryBudget& budget) {
    require(!sets.empty(), "merge_query_sets needs at least one set");
    budget.validate();
    if (sets.size() == 1 && sets.front().size() <= budget.cap) return sets.front();
    const auto d = sets.front().queries.cols();
    Eigen::Index total = 0;
    for (const auto& s : sets) {
        require(s.queries.cols() == d, "query sets disagree on dimension");
        total += s.queries.rows();
    }
    Matrix all(total, d);
    Eigen::Index at = 0;
    for (const auto& s : sets) {
        all.middleRows(at, s.queries.rows()) = s.queries;
        at += s.queries.rows();
    }
    const auto provenance = sets.size() == 1 ? sets.front().provenance : Provenance::mixed;
    return reservoir_subsample(all, budget, provenance);
}

}  // namespace kvc
