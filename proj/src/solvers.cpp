// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/solvers.hpp"

#include <algorithm>
#include <cmath>

#include "kvc/error.hpp"

namespace kvc {

void BoxBounds::validate() const {
    require(lower >= 0.0, "NNLS lower bound must be >= 0");
    require(!upper || *upper > lower, "NNLS upper bound must exceed the lower bound");
}

double BoxBounds::clamp(double x) const {
    x = std::max(x, lower);
    if (upper) x = std::min(x, *upper);
    return x;
}

MatrixD solve_lstsq(const MatrixD& X, const MatrixD& Y) {
    require(X.rows() >= 1 && X.cols() >= 1, "least squares needs a non-empty design matrix");
    require(X.rows() == Y.rows(), "least squares: row count mismatch");
    require(X.allFinite() && Y.allFinite(), "least squares: non-finite input");
    Eigen::CompleteOrthogonalDecomposition<MatrixD> cod(X);
    return cod.solve(Y);
}

double estimate_spectral_norm_sq(const MatrixD& M, int steps) {
    require(steps >= 1, "power iteration needs at least one step");
    if (M.cols() == 0) return 0.0;
    VectorD v = VectorD::Ones(M.cols()) / std::sqrt(static_cast<double>(M.cols()));
    double rayleigh = 0.0;
    for (int s = 0; s < steps; ++s) {
        const VectorD w = M.transpose() * (M * v);
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        v = w / norm;
        rayleigh = (M * v).squaredNorm();
    }
    return rayleigh;
}

double half_squared_residual(const MatrixD& M, const VectorD& w, const VectorD& y) {
    return 0.5 * (M * w - y).squaredNorm();
}

NnlsResult solve_nnls_pgd_traced(const MatrixD& M, const VectorD& y, int iters, const BoxBounds& bounds) {
    require(iters >= 0, "NNLS iteration count must be >= 0");
    require(M.rows() == y.size(), "NNLS: row count mismatch");
    bounds.validate();

    NnlsResult r;
    r.weights = solve_lstsq(M, y).col(0);
    for (auto& w : r.weights) w = bounds.clamp(w);
    r.objective.push_back(half_squared_residual(M, r.weights, y));
    if (iters == 0) return r;

    const double lipschitz = estimate_spectral_norm_sq(M, kPowerIterations);
    if (lipschitz <= 0.0) return r;
    const double step = 1.0 / lipschitz;
    for (int it = 0; it < iters; ++it) {
        const VectorD grad = M.transpose() * (M * r.weights - y);
        r.weights -= step * grad;
        for (auto& w : r.weights) w = bounds.clamp(w);
        r.objective.push_back(half_squared_residual(M, r.weights, y));
    }
    return r;
}

VectorD solve_nnls_pgd(const MatrixD& M, const VectorD& y, int iters, const BoxBounds& bounds) {
    return solve_nnls_pgd_traced(M, y, iters, bounds).weights;
}

}  // namespace kvc
