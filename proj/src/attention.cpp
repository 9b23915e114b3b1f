// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kvc/error.hpp"

namespace kvc {

namespace {

void check_bias(const Vector& bias, Eigen::Index keys) {
    require(bias.size() == 0 || bias.size() == keys, "bias length must match the number of keys");
}

void check_qk(const Matrix& queries, const Matrix& keys) {
    require(queries.cols() == keys.cols(), "query and key dimensions differ");
}

}  // namespace

void HeadCache::validate() const {
    require(keys.rows() == values.rows(), "keys and values have different row counts");
    require(keys.cols() == values.cols(), "keys and values have different widths");
    check_bias(bias, keys.rows());
    require(static_cast<Eigen::Index>(positions.size()) == keys.rows(), "positions must have one entry per row");
    for (std::size_t i = 1; i < positions.size(); ++i)
        require(positions[i] > positions[i - 1], "positions must be strictly increasing");
    require(logical_length >= keys.rows(), "logical_length must be at least the physical length");
}

void CompactHead::validate() const {
    require(keys.rows() >= 1, "compacted head must keep at least one key");
    require(keys.rows() == values.rows() && keys.cols() == values.cols(), "C_k and C_v shapes differ");
    require(bias.size() == keys.rows(), "beta length must equal t");
    require(bias.allFinite(), "beta must be finite");
    if (source_indices) {
        require(static_cast<Eigen::Index>(source_indices->size()) == keys.rows(), "source_indices length must equal t");
        for (std::size_t i = 1; i < source_indices->size(); ++i)
            require((*source_indices)[i] > (*source_indices)[i - 1], "source_indices must be ascending and distinct");
    }
}

HeadCache CompactHead::as_cache(const RopeParams& rope) const {
    HeadCache h;
    h.keys = keys;
    h.values = values;
    h.bias = bias;
    h.logical_length = logical_length;
    h.positions = positions;
    if (h.positions.empty()) {
        h.positions.resize(static_cast<std::size_t>(keys.rows()));
        std::iota(h.positions.begin(), h.positions.end(), 0);
    }
    h.rope = rope;
    return h;
}

std::string provenance_name(Provenance p) {
    switch (p) {
        case Provenance::random: return "random";
        case Provenance::context_prefill: return "context_prefill";
        case Provenance::repeat_prefill: return "repeat_prefill";
        case Provenance::self_study: return "self_study";
        case Provenance::on_policy: return "on_policy";
        case Provenance::mixed: return "mixed";
    }
    return "random";
}

Provenance provenance_from(const std::string& name) {
    for (auto p : {Provenance::random, Provenance::context_prefill, Provenance::repeat_prefill,
                   Provenance::self_study, Provenance::on_policy, Provenance::mixed})
        if (provenance_name(p) == name) return p;
    throw ValidationError("unknown query provenance '" + name + "'");
}

MatrixD scaled_logits(const Matrix& queries, const Matrix& keys, const Vector& bias, double scale) {
    check_qk(queries, keys);
    check_bias(bias, keys.rows());
    require(scale > 0.0, "logit scale must be positive");
    MatrixD logits = scale * (queries.cast<double>() * keys.cast<double>().transpose());
    if (bias.size() > 0) logits.rowwise() += bias.cast<double>().transpose();
    return logits;
}

AttnResult attend(const Matrix& queries, const Matrix& keys, const Matrix& values,
                  const Vector& bias, double scale) {
    require(keys.rows() == values.rows(), "keys and values have different row counts");
    require(keys.rows() >= 1, "attention needs at least one key");
    const MatrixD logits = scaled_logits(queries, keys, bias, scale);
    const MatrixD v = values.cast<double>();

    AttnResult r;
    r.output.resize(queries.rows(), values.cols());
    r.mass.mass.resize(queries.rows());
    r.mass.logmax.resize(queries.rows());
    Eigen::RowVectorXd weights(keys.rows());
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        const double shift = logits.row(i).maxCoeff();
        weights = (logits.row(i).array() - shift).exp().matrix();
        const double mass = weights.sum();
        r.mass.mass[i] = mass;
        r.mass.logmax[i] = shift;
        r.output.row(i) = (weights * v) / mass;
    }
    return r;
}

ShiftedMass attn_mass(const Matrix& queries, const Matrix& keys, const Vector& bias, double scale) {
    require(keys.rows() >= 1, "attention needs at least one key");
    const MatrixD logits = scaled_logits(queries, keys, bias, scale);
    ShiftedMass m;
    m.mass.resize(queries.rows());
    m.logmax.resize(queries.rows());
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        const double shift = logits.row(i).maxCoeff();
        m.logmax[i] = shift;
        m.mass[i] = (logits.row(i).array() - shift).exp().sum();
    }
    return m;
}

Matrix attn_output(const Matrix& queries, const Matrix& keys, const Matrix& values,
                   const Vector& bias, double scale) {
    return attend(queries, keys, values, bias, scale).output.cast<float>();
}

Matrix concat_attn(const Matrix& queries, std::span<const KVBlock> blocks, double scale) {
    require(!blocks.empty(), "concat_attn needs at least one block");
    if (blocks.size() == 1)
        return attn_output(queries, blocks[0].keys, blocks[0].values, blocks[0].bias, scale);

    const auto d = blocks[0].values.cols();
    std::vector<AttnResult> parts;
    parts.reserve(blocks.size());
    for (const auto& b : blocks) {
        require(b.values.cols() == d, "blocks disagree on value width");
        parts.push_back(attend(queries, b.keys, b.values, b.bias, scale));
    }

    MatrixD out = MatrixD::Zero(queries.rows(), d);
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        double global_max = -std::numeric_limits<double>::infinity();
        for (const auto& p : parts) global_max = std::max(global_max, p.mass.logmax[i]);
        double denom = 0.0;
        for (const auto& p : parts) {
            const double soft = p.mass.mass[i] * std::exp(p.mass.logmax[i] - global_max);
            out.row(i) += soft * p.output.row(i);
            denom += soft;
        }
        out.row(i) /= denom;
    }
    return out.cast<float>();
}

Matrix rope_rotate(const Matrix& keys, std::int64_t delta, const RopeParams& rope) {
    require(rope.kind == RopeKind::half_split, "rope_rotate requires half_split rope");
    const auto d = keys.cols();
    require(d % 2 == 0, "half_split rope requires an even head dimension");
    if (delta == 0) return keys;

    const auto half = d / 2;
    std::vector<double> cs(static_cast<std::size_t>(half)), sn(static_cast<std::size_t>(half));
    for (Eigen::Index i = 0; i < half; ++i) {
        const double theta = std::pow(rope.base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
        const double angle = theta * static_cast<double>(delta);
        cs[static_cast<std::size_t>(i)] = std::cos(angle);
        sn[static_cast<std::size_t>(i)] = std::sin(angle);
    }
    Matrix out(keys.rows(), d);
    for (Eigen::Index r = 0; r < keys.rows(); ++r) {
        for (Eigen::Index i = 0; i < half; ++i) {
            const double x = keys(r, i);
            const double y = keys(r, i + half);
            const auto c = cs[static_cast<std::size_t>(i)];
            const auto s = sn[static_cast<std::size_t>(i)];
            out(r, i) = static_cast<float>(x * c - y * s);
            out(r, i + half) = static_cast<float>(x * s + y * c);
        }
    }
    return out;
}

}  // namespace kvc
