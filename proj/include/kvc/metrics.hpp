// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "kvc/attention.hpp"
#include "kvc/selection.hpp"

namespace kvc {

struct ErrorStats {
    double mean = 0.0;
    /// Nearest-rank 95th percentile.
    double p95 = 0.0;
    std::vector<double> per_query;
};

/// Relative L2 error of the compact block's local attention output, per query:
/// ||o - o_hat|| / (||o|| + 1e-12).
ErrorStats output_error(const HeadCache& head, const CompactHead& compact, const Matrix& queries, double scale);

/// |M_hat - M| / M per query, evaluated as |expm1(log M_hat - log M)|.
ErrorStats mass_error(const HeadCache& head, const CompactHead& compact, const Matrix& queries, double scale);

double percentile_nearest_rank(std::vector<double> values, double pct);

struct ReconReport {
    double output_err_mean = 0.0;
    double output_err_p95 = 0.0;
    double mass_relerr_mean = 0.0;
    double mass_relerr_p95 = 0.0;
    std::int64_t n_queries = 0;
};

ReconReport evaluate_head(const HeadCache& head, const CompactHead& compact, const Matrix& queries, double scale);

std::string reports_to_json(const std::map<HeadId, ReconReport>& reports);
std::string reports_to_csv(const std::map<HeadId, ReconReport>& reports);

struct OracleResult {
    IndexList indices;
    VectorD weights;
    double residual = 0.0;
};

inline constexpr Eigen::Index kOracleMaxKeys = 12;

/// Exhaustive search over all size-t subsets with clamped least squares on each; ties go to
/// the lexicographically smallest subset. Limited to T <= 12.
OracleResult oracle_best_subset_mass(const MassFeatures& features, Eigen::Index t,
                                     const BoxBounds& bounds = {1e-6, std::exp(7.0)});

}  // namespace kvc
