// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "kvc/error.hpp"
#include "kvc/solvers.hpp"

namespace kvc {

namespace {

void check_dims(const HeadCache& head, const CompactHead& compact, const Matrix& queries) {
    require(queries.rows() >= 1, "evaluation needs at least one query");
    require(queries.cols() == head.dim(), "query dimension differs from the cache");
    require(compact.keys.cols() == head.dim(), "compact head dimension differs from the cache");
    require(compact.values.cols() == head.values.cols(), "compact value width differs from the cache");
}

ErrorStats summarize(std::vector<double> per_query) {
    ErrorStats s;
    s.mean = std::accumulate(per_query.begin(), per_query.end(), 0.0) / static_cast<double>(per_query.size());
    s.p95 = percentile_nearest_rank(per_query, 95.0);
    s.per_query = std::move(per_query);
    return s;
}

}  // namespace

double percentile_nearest_rank(std::vector<double> values, double pct) {
    require(!values.empty(), "percentile of an empty list");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

ErrorStats output_error(const HeadCache& head, const CompactHead& compact, const Matrix& queries, double scale) {
    check_dims(head, compact, queries);
    const auto orig = attend(queries, head.keys, head.values, head.bias, scale);
    const auto comp = attend(queries, compact.keys, compact.values, compact.bias, scale);
    std::vector<double> err(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index i = 0; i < queries.rows(); ++i)
        err[static_cast<std::size_t>(i)] =
            (orig.output.row(i) - comp.output.row(i)).norm() / (orig.output.row(i).norm() + 1e-12);
    return summarize(std::move(err));
}

ErrorStats mass_error(const HeadCache& head, const CompactHead& compact, const Matrix& queries, double scale) {
    check_dims(head, compact, queries);
    const auto orig = attn_mass(queries, head.keys, head.bias, scale);
    const auto comp = attn_mass(queries, compact.keys, compact.bias, scale);
    std::vector<double> err(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index i = 0; i < queries.rows(); ++i)
        err[static_cast<std::size_t>(i)] = std::abs(std::expm1(comp.log_total(i) - orig.log_total(i)));
    return summarize(std::move(err));
}

ReconReport evaluate_head(const HeadCache& head, const CompactHead& compact, const Matrix& queries, double scale) {
    const auto out = output_error(head, compact, queries, scale);
    const auto mass = mass_error(head, compact, queries, scale);
    return {out.mean, out.p95, mass.mean, mass.p95, queries.rows()};
}

std::string reports_to_json(const std::map<HeadId, ReconReport>& reports) {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& [id, r] : reports)
        heads.push_back({{"layer", id.layer},
                         {"head", id.head},
                         {"output_err_mean", r.output_err_mean},
                         {"output_err_p95", r.output_err_p95},
                         {"mass_relerr_mean", r.mass_relerr_mean},
                         {"mass_relerr_p95", r.mass_relerr_p95},
                         {"n_queries", r.n_queries}});
    return nlohmann::json{{"heads", heads}}.dump();
}

std::string reports_to_csv(const std::map<HeadId, ReconReport>& reports) {
    std::ostringstream os;
    os.precision(17);
    os << "layer,head,output_err_mean,output_err_p95,mass_relerr_mean,mass_relerr_p95,n_queries\n";
    for (const auto& [id, r] : reports)
        os << id.layer << ',' << id.head << ',' << r.output_err_mean << ',' << r.output_err_p95 << ','
           << r.mass_relerr_mean << ',' << r.mass_relerr_p95 << ',' << r.n_queries << '\n';
    return os.str();
}

OracleResult oracle_best_subset_mass(const MassFeatures& features, Eigen::Index t, const BoxBounds& bounds) {
    const auto T = features.num_keys();
    require(T <= kOracleMaxKeys, "oracle_best_subset_mass is limited to 12 keys");
    require(t >= 1 && t <= T, "subset size must lie in [1, T]");
    bounds.validate();

    // Subsets are visited in lexicographic order, so strict improvement keeps the smallest on ties.
    IndexList subset(static_cast<std::size_t>(t));
    std::iota(subset.begin(), subset.end(), 0);
    OracleResult best;
    best.residual = std::numeric_limits<double>::infinity();
    while (true) {
        const MatrixD cols = gather_columns(features.phi, subset);
        const VectorD w = solve_nnls_pgd(cols, features.target, 0, bounds);
        const double r = (cols * w - features.target).norm();
        if (r < best.residual) {
            best = {subset, w, r};
        }
        std::ptrdiff_t i = static_cast<std::ptrdiff_t>(t) - 1;
        while (i >= 0 && subset[static_cast<std::size_t>(i)] == T - t + i) --i;
        if (i < 0) break;
        ++subset[static_cast<std::size_t>(i)];
        for (auto j = static_cast<std::size_t>(i) + 1; j < subset.size(); ++j) subset[j] = subset[j - 1] + 1;
    }
    return best;
}

}  // namespace kvc
