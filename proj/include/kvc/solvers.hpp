// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "kvc/types.hpp"

namespace kvc {

/// Box constraint lower <= w <= upper for NNLS weights.
struct BoxBounds {
    double lower = 1e-6;
    std::optional<double> upper;

    void validate() const;
    double clamp(double x) const;
};

/// Minimum-norm minimizer of ||X M - Y||_F (complete orthogonal decomposition).
MatrixD solve_lstsq(const MatrixD& X, const MatrixD& Y);

/// Rayleigh quotient of M^T M after `steps` power iterations from the normalized all-ones vector.
double estimate_spectral_norm_sq(const MatrixD& M, int steps);

inline constexpr int kPowerIterations = 10;

struct NnlsResult {
    VectorD weights;
    /// 0.5 * ||M w - y||^2 at the warm start and after every projected step.
    std::vector<double> objective;
};

/// Clamped least-squares warm start followed by `iters` projected gradient steps with step 1/L.
NnlsResult solve_nnls_pgd_traced(const MatrixD& M, const VectorD& y, int iters, const BoxBounds& bounds);

VectorD solve_nnls_pgd(const MatrixD& M, const VectorD& y, int iters, const BoxBounds& bounds);

double half_squared_residual(const MatrixD& M, const VectorD& w, const VectorD& y);

}  // namespace kvc
