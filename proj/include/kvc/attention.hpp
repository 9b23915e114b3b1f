// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "kvc/container.hpp"
#include "kvc/types.hpp"

namespace kvc {

// Conventions for every primitive below:
//  - rows of Q are queries, rows of K/V are tokens, columns are head dimensions;
//  - an empty bias vector means "no bias" (all zeros);
//  - logits are scale * <q, k> + bias, i.e. the bias is added after scaling;
//  - reductions accumulate in f64 even though inputs and outputs are f32.

/// One KV head of an uncompacted (or previously compacted) cache.
struct HeadCache {
    Matrix keys;    // T x d, RoPE already applied
    Matrix values;  // T x d
    /// Per-token additive logit bias. Empty for a raw prefill cache; set when a
    /// compacted head is fed back in for re-compaction.
    Vector bias;
    std::int64_t logical_length = 0;
    IndexList positions;
    RopeParams rope;

    Eigen::Index size() const { return keys.rows(); }
    Eigen::Index dim() const { return keys.cols(); }

    /// Checks row counts, positions ordering and logical_length >= T.
    void validate() const;
};

/// The (C_k, beta, C_v) triple that replaces a HeadCache.
struct CompactHead {
    Matrix keys;    // t x d
    Vector bias;    // t
    Matrix values;  // t x d
    std::int64_t logical_length = 0;
    /// Rows of the source cache the keys were taken from, ascending.
    std::optional<IndexList> source_indices;
    /// Original token positions of the retained rows.
    IndexList positions;
    DType storage = DType::f32;

    Eigen::Index size() const { return keys.rows(); }

    void validate() const;
    /// Views the compacted head as a cache so it can be compacted again.
    HeadCache as_cache(const RopeParams& rope = {}) const;
};

enum class Provenance { random, context_prefill, repeat_prefill, self_study, on_policy, mixed };

std::string provenance_name(Provenance p);
Provenance provenance_from(const std::string& name);

struct QuerySet {
    Matrix queries;  // n x d
    Provenance provenance = Provenance::random;
    std::optional<std::uint64_t> seed;

    Eigen::Index size() const { return queries.rows(); }
};

/// Per-query softmax normalizer in shifted form: true mass = mass * exp(logmax).
struct ShiftedMass {
    VectorD mass;
    VectorD logmax;

    Eigen::Index size() const { return mass.size(); }
    /// log of the true mass; always representable.
    double log_total(Eigen::Index i) const { return std::log(mass[i]) + logmax[i]; }
    /// Unshifted mass; may overflow to +inf for very large logits.
    double total(Eigen::Index i) const { return mass[i] * std::exp(logmax[i]); }
};

/// Default logit scale 1/sqrt(d).
inline double default_scale(Eigen::Index d) { return 1.0 / std::sqrt(static_cast<double>(d)); }

MatrixD scaled_logits(const Matrix& queries, const Matrix& keys, const Vector& bias, double scale);

ShiftedMass attn_mass(const Matrix& queries, const Matrix& keys, const Vector& bias, double scale);

Matrix attn_output(const Matrix& queries, const Matrix& keys, const Matrix& values,
                   const Vector& bias, double scale);

/// attn_output and attn_mass from a single pass over the logits.
struct AttnResult {
    MatrixD output;
    ShiftedMass mass;
};
AttnResult attend(const Matrix& queries, const Matrix& keys, const Matrix& values,
                  const Vector& bias, double scale);

struct KVBlock {
    Matrix keys;
    Matrix values;
    Vector bias;
};

/// Attention over the row-concatenation of `blocks`, assembled as a mass-weighted
/// mixture of each block's locally normalized output.
Matrix concat_attn(const Matrix& queries, std::span<const KVBlock> blocks, double scale);

/// Rotates every row by `delta` positions using the half-split RoPE convention:
/// dimension i pairs with i + d/2 and turns by base^(-2i/d) * delta.
Matrix rope_rotate(const Matrix& keys, std::int64_t delta, const RopeParams& rope);

}  // namespace kvc
