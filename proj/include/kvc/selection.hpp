// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "kvc/solvers.hpp"
#include "kvc/types.hpp"

namespace kvc {

enum class Aggregation { mean, rms, max };

std::string aggregation_name(Aggregation a);
Aggregation aggregation_from(const std::string& name);

/// Per-query max-shifted mass features: phi(i, j) = exp(logit(i, j) - rowmax(i)),
/// target(i) = sum_j phi(i, j).
struct MassFeatures {
    MatrixD phi;     // n x T, entries in (0, 1]
    VectorD target;  // n
    VectorD rowmax;  // n

    Eigen::Index num_keys() const { return phi.cols(); }
};

MassFeatures build_mass_features(const Matrix& queries, const Matrix& keys, const Vector& bias, double scale);

struct SelectionResult {
    IndexList indices;               // ascending, distinct
    std::optional<VectorD> weights;  // aligned with indices
    std::optional<VectorD> scores;
    /// ||phi[:, S] w - target||_2 at return (OMP only).
    double residual = 0.0;
    /// Residual norm after each refit of the greedy phase (OMP only).
    std::vector<double> refit_residuals;
    /// Set when OMP could not keep `t` keys that all clear the prune threshold.
    bool short_of_budget = false;
};

/// Per-key importance: aggregate over queries of the softmax weight each key receives.
VectorD score_keys(const Matrix& queries, const Matrix& keys, Aggregation agg, double scale,
                   const Vector& bias = {});

/// Indices of the t largest scores, ties toward the lower index, returned ascending.
SelectionResult select_topk(const VectorD& scores, Eigen::Index t);

struct OmpOptions {
    Eigen::Index budget = 1;  // t
    int keys_per_step = 1;    // k
    int refit_interval = 1;   // tau
    BoxBounds bounds{1e-6, std::exp(7.0)};
    double prune_threshold = -7.0;  // drop keys with ln(w) below this
    int max_refill_rounds = 10;
    /// After a refit whose clamped solution is worse than the previous one, fall back to the
    /// previous weights with new keys at the lower bound if that is better.
    bool monotone_refit = true;
};

/// Greedy mass matching (OMP) with periodic clamped least-squares refits and
/// prune-and-refill of keys whose weight falls below exp(prune_threshold).
SelectionResult select_omp(const MassFeatures& features, const OmpOptions& options);

/// Keeps the B highest (head, key) scores across all heads; ties by (head, key) ascending.
std::vector<IndexList> select_global_topk(std::span<const VectorD> per_head_scores, std::int64_t budget);

/// ||phi[:, S] w - target||_2
double mass_residual(const MassFeatures& features, const IndexList& indices, const VectorD& weights);

MatrixD gather_columns(const MatrixD& m, const IndexList& cols);

}  // namespace kvc
