// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

// Test fixtures and naive reference implementations. The oracles here use plain loops in
// long double so they share no code path with the library.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "kvc/attention.hpp"

namespace kvt {

using kvc::Matrix;
using kvc::Vector;

inline Matrix randn(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sigma = 1.0) {
    std::normal_distribution<double> n(0.0, sigma);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<float>(n(rng));
    return m;
}

inline Vector randv(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = static_cast<float>(u(rng));
    return v;
}

inline int randint(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

using Grid = std::vector<std::vector<long double>>;

inline Grid naive_logits(const Matrix& q, const Matrix& k, const Vector& bias, double scale) {
    Grid out(static_cast<std::size_t>(q.rows()), std::vector<long double>(static_cast<std::size_t>(k.rows())));
    for (Eigen::Index i = 0; i < q.rows(); ++i)
        for (Eigen::Index j = 0; j < k.rows(); ++j) {
            long double s = 0;
            for (Eigen::Index c = 0; c < q.cols(); ++c) s += static_cast<long double>(q(i, c)) * k(j, c);
            s *= scale;
            if (bias.size() > 0) s += bias[j];
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s;
        }
    return out;
}

/// Unshifted sum of exponentials; fine for the logit ranges used in tests.
inline std::vector<long double> naive_mass(const Matrix& q, const Matrix& k, const Vector& bias, double scale) {
    const auto l = naive_logits(q, k, bias, scale);
    std::vector<long double> m;
    for (const auto& row : l) {
        long double s = 0;
        for (auto x : row) s += std::exp(x);
        m.push_back(s);
    }
    return m;
}

inline std::vector<std::vector<long double>> naive_output(const Matrix& q, const Matrix& k, const Matrix& v,
                                                          const Vector& bias, double scale) {
    const auto l = naive_logits(q, k, bias, scale);
    std::vector<std::vector<long double>> out;
    for (const auto& row : l) {
        std::vector<long double> o(static_cast<std::size_t>(v.cols()), 0.0L);
        long double z = 0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            const long double w = std::exp(row[j]);
            z += w;
            for (Eigen::Index c = 0; c < v.cols(); ++c) o[static_cast<std::size_t>(c)] += w * v(static_cast<Eigen::Index>(j), c);
        }
        for (auto& x : o) x /= z;
        out.push_back(o);
    }
    return out;
}

/// max |a - b| / max(|b|, floor) over matching entries.
inline double max_rel_diff(const Matrix& a, const std::vector<std::vector<long double>>& b, double floor = 1e-3) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            const double ref = static_cast<double>(b[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            worst = std::max(worst, std::abs(a(i, j) - ref) / std::max(std::abs(ref), floor));
        }
    return worst;
}

/// Relative Frobenius distance ||a - b|| / ||b||.
inline double rel_fro(const Matrix& a, const Matrix& b) {
    return (a.cast<double>() - b.cast<double>()).norm() / std::max(b.cast<double>().norm(), 1e-30);
}

inline kvc::HeadCache make_head(Matrix k, Matrix v) {
    kvc::HeadCache h;
    h.keys = std::move(k);
    h.values = std::move(v);
    h.positions.resize(static_cast<std::size_t>(h.keys.rows()));
    for (std::size_t i = 0; i < h.positions.size(); ++i) h.positions[i] = static_cast<std::int64_t>(i);
    h.logical_length = h.keys.rows();
    return h;
}

inline kvc::QuerySet make_queries(Matrix q) {
    kvc::QuerySet s;
    s.queries = std::move(q);
    return s;
}

/// Random head with unit-variance keys and values, queries of norm ~sqrt(d).
inline kvc::HeadCache random_head(std::mt19937_64& rng, Eigen::Index T, Eigen::Index d) {
    return make_head(randn(rng, T, d), randn(rng, T, d));
}

}  // namespace kvt
