// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/selection.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

#include "kvc/attention.hpp"
#include "kvc/error.hpp"

namespace kvc {

std::string aggregation_name(Aggregation a) {
    switch (a) {
        case Aggregation::mean: return "mean";
        case Aggregation::rms: return "rms";
        case Aggregation::max: return "max";
    }
    return "rms";
}

Aggregation aggregation_from(const std::string& name) {
    if (name == "mean") return Aggregation::mean;
    if (name == "rms") return Aggregation::rms;
    if (name == "max") return Aggregation::max;
    throw ValidationError("unknown aggregation '" + name + "'");
}

MassFeatures build_mass_features(const Matrix& queries, const Matrix& keys, const Vector& bias, double scale) {
    require(queries.rows() >= 1 && keys.rows() >= 1, "mass features need queries and keys");
    MassFeatures f;
    f.phi = scaled_logits(queries, keys, bias, scale);
    f.rowmax = f.phi.rowwise().maxCoeff();
    f.phi.colwise() -= f.rowmax;
    f.phi = f.phi.array().exp().matrix();
    f.target = f.phi.rowwise().sum();
    return f;
}

MatrixD gather_columns(const MatrixD& m, const IndexList& cols) {
    MatrixD out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(cols[c]);
    return out;
}

double mass_residual(const MassFeatures& f, const IndexList& indices, const VectorD& weights) {
    if (indices.empty()) return f.target.norm();
    return (gather_columns(f.phi, indices) * weights - f.target).norm();
}

VectorD score_keys(const Matrix& queries, const Matrix& keys, Aggregation agg, double scale, const Vector& bias) {
    require(queries.rows() >= 1 && keys.rows() >= 1, "score_keys needs at least one query and one key");
    MatrixD a = scaled_logits(queries, keys, bias, scale);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        a.row(i).array() -= a.row(i).maxCoeff();
        a.row(i) = a.row(i).array().exp().matrix();
        a.row(i) /= a.row(i).sum();
    }
    const auto n = static_cast<double>(a.rows());
    const VectorD mean = a.colwise().sum().transpose() / n;
    const VectorD peak = a.colwise().maxCoeff().transpose();
    switch (agg) {
        case Aggregation::mean: return mean;
        case Aggregation::max: return peak;
        case Aggregation::rms: {
            VectorD rms = (a.array().square().colwise().sum().transpose() / n).sqrt().matrix();
            // mean <= rms <= max holds exactly in real arithmetic; pin it against rounding
            rms = rms.cwiseMax(mean).cwiseMin(peak);
            return rms;
        }
    }
    return mean;
}

namespace {

/// Orders candidate indices by (value desc, index asc) and keeps the first `count`.
IndexList top_by_value(const VectorD& values, const std::vector<bool>& eligible, Eigen::Index count) {
    IndexList cand;
    for (Eigen::Index j = 0; j < values.size(); ++j)
        if (eligible[static_cast<std::size_t>(j)]) cand.push_back(j);
    const auto keep = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(count));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [&](std::int64_t a, std::int64_t b) {
                          if (values[a] != values[b]) return values[a] > values[b];
                          return a < b;
                      });
    cand.resize(keep);
    return cand;
}

}  // namespace

SelectionResult select_topk(const VectorD& scores, Eigen::Index t) {
    require(t >= 1 && t <= scores.size(), "select_topk: t must lie in [1, T]");
    SelectionResult r;
    r.indices = top_by_value(scores, std::vector<bool>(static_cast<std::size_t>(scores.size()), true), t);
    std::sort(r.indices.begin(), r.indices.end());
    r.scores = scores;
    return r;
}

namespace {

class OmpState {
public:
    OmpState(const MassFeatures& f, const OmpOptions& o)
        : f_(f), o_(o), in_set_(static_cast<std::size_t>(f.num_keys()), false),
          banned_(static_cast<std::size_t>(f.num_keys()), false), residual_(f.target) {}

    void refit(bool guard) {
        // previous weights keyed by index, for the fallback below
        std::vector<std::pair<std::int64_t, double>> prev;
        for (std::size_t i = 0; i < fitted_.size(); ++i) prev.emplace_back(fitted_[i], weights_[static_cast<Eigen::Index>(i)]);
        const double prev_norm = residual_.norm();

        std::sort(set_.begin(), set_.end());
        if (set_.empty()) {
            weights_.resize(0);
            residual_ = f_.target;
            fitted_.clear();
            return;
        }
        const MatrixD sub = gather_columns(f_.phi, set_);
        weights_ = solve_nnls_pgd(sub, f_.target, 0, o_.bounds);
        residual_ = f_.target - sub * weights_;
        fitted_ = set_;
        if (!guard || !o_.monotone_refit || residual_.norm() <= prev_norm) return;

        // Clamping can leave the refit worse than the last one. Keep the old weights and give
        // the new keys the lower bound instead when that is better.
        VectorD keep(static_cast<Eigen::Index>(set_.size()));
        for (std::size_t i = 0; i < set_.size(); ++i) {
            auto it = std::find_if(prev.begin(), prev.end(), [&](const auto& p) { return p.first == set_[i]; });
            keep[static_cast<Eigen::Index>(i)] = it != prev.end() ? it->second : o_.bounds.lower;
        }
        const VectorD r = f_.target - sub * keep;
        if (r.norm() < residual_.norm()) {
            weights_ = keep;
            residual_ = r;
        }
    }

    /// Greedy additions until |S| == budget or candidates run out. Returns false if exhausted.
    bool fill(std::vector<double>* history) {
        bool refitted = true;
        while (static_cast<Eigen::Index>(set_.size()) < o_.budget) {
            std::vector<bool> eligible(in_set_.size());
            bool any = false;
            for (std::size_t j = 0; j < eligible.size(); ++j) {
                eligible[j] = !in_set_[j] && !banned_[j];
                any = any || eligible[j];
            }
            if (!any) {
                if (!refitted) refit(true);
                return false;
            }
            const VectorD corr = f_.phi.transpose() * residual_;
            const auto want = std::min<Eigen::Index>(o_.keys_per_step,
                                                     o_.budget - static_cast<Eigen::Index>(set_.size()));
            for (auto j : top_by_value(corr, eligible, want)) {
                set_.push_back(j);
                in_set_[static_cast<std::size_t>(j)] = true;
            }
            ++step_;
            refitted = false;
            if (step_ % o_.refit_interval == 0 || static_cast<Eigen::Index>(set_.size()) == o_.budget) {
                refit(true);
                refitted = true;
                if (history) history->push_back(residual_.norm());
            }
        }
        if (!refitted) refit(true);
        return true;
    }

    /// Removes keys whose log-weight is below the threshold. Returns how many were removed.
    std::size_t prune(bool allow_empty) {
        IndexList keep;
        IndexList dropped;
        VectorD kept_w;
        for (std::size_t i = 0; i < set_.size(); ++i) {
            if (std::log(weights_[static_cast<Eigen::Index>(i)]) < o_.prune_threshold)
                dropped.push_back(set_[i]);
            else
                keep.push_back(set_[i]);
        }
        if (dropped.empty()) return 0;
        if (keep.empty() && !allow_empty) {
            // keep the heaviest key rather than return an empty selection
            Eigen::Index best = 0;
            weights_.maxCoeff(&best);
            keep.push_back(set_[static_cast<std::size_t>(best)]);
            dropped.erase(std::find(dropped.begin(), dropped.end(), keep.front()));
        }
        for (auto j : dropped) {
            in_set_[static_cast<std::size_t>(j)] = false;
            banned_[static_cast<std::size_t>(j)] = true;
        }
        set_ = std::move(keep);
        refit(false);
        return dropped.size();
    }

    bool has_candidates() const {
        for (std::size_t j = 0; j < in_set_.size(); ++j)
            if (!in_set_[j] && !banned_[j]) return true;
        return false;
    }

    const IndexList& set() const { return set_; }
    const VectorD& weights() const { return weights_; }
    double residual_norm() const { return residual_.norm(); }

private:
    const MassFeatures& f_;
    const OmpOptions& o_;
    std::vector<bool> in_set_;
    std::vector<bool> banned_;
    IndexList set_;
    IndexList fitted_;  // set_ as of the last refit, aligned with weights_
    VectorD weights_;
    VectorD residual_;
    long step_ = 0;
};

}  // namespace

SelectionResult select_omp(const MassFeatures& features, const OmpOptions& options) {
    require(options.budget >= 1 && options.budget <= features.num_keys(), "select_omp: t must lie in [1, T]");
    require(options.keys_per_step >= 1, "select_omp: k must be >= 1");
    require(options.refit_interval >= 1, "select_omp: tau must be >= 1");
    require(options.max_refill_rounds >= 0, "select_omp: refill rounds must be >= 0");
    options.bounds.validate();

    OmpState state(features, options);
    SelectionResult r;
    bool complete = state.fill(&r.refit_residuals);

    int rounds = 0;
    while (true) {
        const bool last_chance = rounds >= options.max_refill_rounds;
        if (state.prune(/*allow_empty=*/false) == 0) break;
        if (last_chance || !state.has_candidates()) {
            complete = false;
            // no refill possible; whatever survives this final prune is the answer
            while (state.prune(false) > 0) {
            }
            break;
        }
        complete = state.fill(nullptr) && complete;
        ++rounds;
    }

    r.indices = state.set();
    r.weights = state.weights();
    r.residual = state.residual_norm();
    r.short_of_budget = !complete || static_cast<Eigen::Index>(r.indices.size()) < options.budget;
    return r;
}

std::vector<IndexList> select_global_topk(std::span<const VectorD> per_head_scores, std::int64_t budget) {
    std::int64_t total = 0;
    for (const auto& s : per_head_scores) total += s.size();
    require(budget >= 0 && budget <= total, "select_global_topk: budget out of range");

    std::vector<std::tuple<double, std::size_t, Eigen::Index>> all;
    all.reserve(static_cast<std::size_t>(total));
    for (std::size_t h = 0; h < per_head_scores.size(); ++h)
        for (Eigen::Index j = 0; j < per_head_scores[h].size(); ++j) all.emplace_back(per_head_scores[h][j], h, j);
    const auto keep = static_cast<std::ptrdiff_t>(budget);
    std::partial_sort(all.begin(), all.begin() + keep, all.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
        return std::get<2>(a) < std::get<2>(b);
    });
    std::vector<IndexList> out(per_head_scores.size());
    for (std::ptrdiff_t i = 0; i < keep; ++i) out[std::get<1>(all[static_cast<std::size_t>(i)])].push_back(std::get<2>(all[static_cast<std::size_t>(i)]));
    for (auto& l : out) std::sort(l.begin(), l.end());
    return out;
}

}  // namespace kvc
