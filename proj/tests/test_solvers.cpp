// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>

#include "kvc/error.hpp"
#include "kvc/solvers.hpp"

using namespace kvc;

namespace {

MatrixD rand_uniform(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    MatrixD m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
    return m;
}

/// Minimum of 0.5 ||M w - y||^2 over a dense grid on the box (t <= 3).
double grid_oracle(const MatrixD& M, const VectorD& y, double lo, double hi, int points) {
    const auto t = M.cols();
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> at(static_cast<std::size_t>(t), 0);
    VectorD w(t);
    while (true) {
        for (Eigen::Index j = 0; j < t; ++j) w[j] = lo + (hi - lo) * at[static_cast<std::size_t>(j)] / (points - 1);
        best = std::min(best, 0.5 * (M * w - y).squaredNorm());
        std::size_t j = 0;
        while (j < at.size() && ++at[j] == points) at[j++] = 0;
        if (j == at.size()) break;
    }
    return best;
}

}  // namespace

TEST_CASE("solve_lstsq examples") {
    SUBCASE("identity design returns Y") {
        MatrixD Y(3, 2);
        Y << 1, 2, 3, 4, 5, 6;
        CHECK((solve_lstsq(MatrixD::Identity(3, 3), Y) - Y).norm() < 1e-12);
    }
    SUBCASE("two equal rows average their targets") {
        MatrixD X(2, 1), Y(2, 1);
        X << 1, 1;
        Y << 0, 2;
        CHECK(solve_lstsq(X, Y)(0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("an all-zero column gets a zero row (minimum norm)") {
        std::mt19937_64 rng(1);
        MatrixD X = rand_uniform(rng, 6, 3, -1, 1);
        X.col(1).setZero();
        const MatrixD Y = rand_uniform(rng, 6, 2, -1, 1);
        const MatrixD M = solve_lstsq(X, Y);
        CHECK(M.row(1).norm() == 0.0);
        // Pseudo-inverse oracle through the SVD.
        const MatrixD pinv = X.completeOrthogonalDecomposition().pseudoInverse();
        CHECK((M - pinv * Y).norm() < 1e-10);
    }
    SUBCASE("underdetermined systems return the minimum-norm solution") {
        MatrixD X(1, 2), Y(1, 1);
        X << 1, 1;
        Y << 2;
        const MatrixD M = solve_lstsq(X, Y);
        CHECK(M(0, 0) == doctest::Approx(1.0));
        CHECK(M(1, 0) == doctest::Approx(1.0));
    }
    SUBCASE("non-finite input") {
        MatrixD X = MatrixD::Identity(2, 2);
        X(0, 0) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(solve_lstsq(X, MatrixD::Zero(2, 1)), ValidationError);
    }
}

TEST_CASE("property: least-squares normal equations hold") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = std::uniform_int_distribution<int>(5, 60)(rng);
        const int t = std::uniform_int_distribution<int>(1, 5)(rng);
        const MatrixD X = rand_uniform(rng, n, t, -1, 1), Y = rand_uniform(rng, n, 4, -3, 3);
        const MatrixD M = solve_lstsq(X, Y);
        const double lhs = (X.transpose() * (X * M - Y)).norm();
        CHECK(lhs <= 1e-4 * (1.0 + (X.transpose() * Y).norm()));
    }
}

TEST_CASE("estimate_spectral_norm_sq") {
    CHECK(estimate_spectral_norm_sq(2.0 * MatrixD::Identity(3, 3), 1) == doctest::Approx(4.0));
    MatrixD D = MatrixD::Zero(2, 2);
    D(0, 0) = 3;
    D(1, 1) = 1;
    CHECK(estimate_spectral_norm_sq(D, 10) == doctest::Approx(9.0).epsilon(0.01));
    CHECK(estimate_spectral_norm_sq(MatrixD::Zero(4, 3), 10) == 0.0);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const MatrixD M = rand_uniform(rng, 7, 4, -1, 1);
        const double exact = Eigen::JacobiSVD<MatrixD>(M).singularValues()[0];
        double prev = 0.0;
        for (int steps = 1; steps <= 10; ++steps) {
            const double est = estimate_spectral_norm_sq(M, steps);
            CHECK(est <= exact * exact * (1 + 1e-12));
            CHECK(est >= prev * (1 - 1e-12));
            prev = est;
        }
    }
}

TEST_CASE("solve_nnls_pgd examples") {
    MatrixD M(1, 1);
    M << 1;
    VectorD y(1);
    y << 2;
    CHECK(solve_nnls_pgd(M, y, 0, {1e-6, std::nullopt})[0] == doctest::Approx(2.0));
    y << -2;
    CHECK(solve_nnls_pgd(M, y, 0, {1e-6, std::nullopt})[0] == 1e-6);
    CHECK(solve_nnls_pgd(M, y, 5, {1e-6, std::nullopt})[0] == 1e-6);

    MatrixD M2(2, 1);
    M2 << 1, 1;
    VectorD y2(2);
    y2 << 3, 5;
    CHECK(solve_nnls_pgd(M2, y2, 0, {1e-6, std::nullopt})[0] == doctest::Approx(4.0));
    CHECK(solve_nnls_pgd(M2, y2, 0, {1e-6, 2.5})[0] == 2.5);
}

TEST_CASE("property: PGD descent and feasibility") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = std::uniform_int_distribution<int>(1, 30)(rng);
        const int t = std::uniform_int_distribution<int>(1, 8)(rng);
        const MatrixD M = rand_uniform(rng, n, t, 0, 1);
        const VectorD y = rand_uniform(rng, n, 1, -2, 4).col(0);
        const double lo = trial % 3 == 0 ? 0.0 : 1e-6;
        const std::optional<double> hi = trial % 2 == 0 ? std::optional<double>(std::exp(1.0)) : std::nullopt;
        const auto r = solve_nnls_pgd_traced(M, y, 25, {lo, hi});
        REQUIRE(r.objective.size() == 26);
        for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] + 1e-7);
        for (Eigen::Index j = 0; j < t; ++j) {
            CHECK(r.weights[j] >= lo);
            if (hi) CHECK(r.weights[j] <= *hi);
        }
        CHECK(r.objective.back() == doctest::Approx(half_squared_residual(M, r.weights, y)));
    }
}

TEST_CASE("property: PGD matches a dense grid oracle for t <= 3") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int t = 1 + trial % 3;
        const int n = std::uniform_int_distribution<int>(t, 8)(rng);
        const MatrixD M = rand_uniform(rng, n, t, 0, 1);
        const VectorD y = rand_uniform(rng, n, 1, -1, 3).col(0);
        const double hi = 4.0;
        const VectorD w = solve_nnls_pgd(M, y, 200, {1e-6, hi});
        const double got = half_squared_residual(M, w, y);
        const double grid = grid_oracle(M, y, 1e-6, hi, t == 3 ? 81 : 401);
        CHECK(got <= grid + 1e-2);
    }
}

TEST_CASE("bounds validation") {
    CHECK_THROWS_AS((BoxBounds{-1.0, std::nullopt}).validate(), ValidationError);
    CHECK_THROWS_AS((BoxBounds{1.0, 0.5}).validate(), ValidationError);
    CHECK_THROWS_AS(solve_nnls_pgd(MatrixD::Ones(2, 1), VectorD::Ones(2), -1, {}), ValidationError);
}
