// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvc/attention.hpp"
#include "kvc/schedule.hpp"
#include "kvc/selection.hpp"

namespace kvc {

enum class Method { omp, omp_fast, highest_attention, selection_only };
enum class BetaMode { nnls_box, omp_prune, zero };
enum class ValueMode { lstsq, original };

std::string method_name(Method m);
std::string beta_mode_name(BetaMode m);
std::string value_mode_name(ValueMode m);

struct CompactionConfig {
    Method method = Method::omp;
    double ratio = 0.1;
    Aggregation agg = Aggregation::rms;
    int omp_k = 1;
    int omp_tau = 1;
    BetaMode beta_mode = BetaMode::omp_prune;
    ValueMode value_mode = ValueMode::lstsq;
    /// Logit scale; 0 selects 1/sqrt(d).
    double scale = 0.0;
    DType dtype_out = DType::f32;

    /// Named variants: omp (k=1, tau=1), omp_fast (k=4, tau=2), highest_attention (beta box
    /// [-3, 3]), selection_only (no beta, original values).
    static CompactionConfig preset(Method method);

    void validate() const;
    double scale_for(Eigen::Index dim) const { return scale > 0.0 ? scale : default_scale(dim); }
};

/// NNLS bounds and PGD iterations used for each beta mode.
BoxBounds beta_bounds(BetaMode mode);
int beta_iterations(BetaMode mode);

/// beta = ln w where w fits the original mass with the retained keys. Both sides use the
/// original cache's per-query max logit as the shift.
Vector fit_beta(const Matrix& queries, const Matrix& keys, const Vector& key_bias,
                const Matrix& compact_keys, BetaMode mode, double scale);

/// Least-squares C_v so the compact block's local attention output matches the original.
Matrix fit_values(const Matrix& queries, const Matrix& keys, const Matrix& values, const Vector& key_bias,
                  const Matrix& compact_keys, const Vector& compact_bias, double scale);

CompactHead compact_head(const HeadCache& head, const QuerySet& queries, Eigen::Index budget,
                         const CompactionConfig& cfg);

/// Keeps every row, bias unchanged (zero for raw caches).
CompactHead passthrough(const HeadCache& head);

using CacheMap = std::map<HeadId, HeadCache>;
using QueryMap = std::map<HeadId, QuerySet>;
using CompactMap = std::map<HeadId, CompactHead>;

/// Per-head token budgets: schedule shares at cfg.ratio, or a uniform ratio when no schedule.
/// Heads missing from the schedule are absent from the result (they pass through unchanged).
std::map<HeadId, Eigen::Index> head_budgets(const CacheMap& cache, const std::optional<BudgetSchedule>& schedule,
                                            double ratio);

CompactMap compact_cache(const CacheMap& cache, const QueryMap& queries,
                         const std::optional<BudgetSchedule>& schedule, const CompactionConfig& cfg,
                         int threads = 1);

struct ChunkPlan {
    std::vector<Span> spans;  // [start, end) row ranges tiling the region between the fixed blocks
    std::int64_t fixed_prefix_len = 0;
    std::int64_t fixed_suffix_len = 0;

    void validate(std::int64_t length) const;
};

HeadCache slice_head(const HeadCache& head, std::int64_t begin, std::int64_t end);

/// KV-based chunking: slice every span out of the full cache, compact each slice with its
/// own queries, and concatenate [prefix] + chunks + [suffix] with the fixed blocks at beta = 0.
CompactMap compact_chunked(const CacheMap& cache, const ChunkPlan& plan, std::span<const QueryMap> chunk_queries,
                           const std::optional<BudgetSchedule>& schedule, const CompactionConfig& cfg,
                           int threads = 1);

/// Text-based chunking: `local_chunks[c]` holds chunk c's rows as prefilled in isolation (local
/// positions). Each compacted chunk's keys are rotated by global_start - local_start before merge.
/// Fixed blocks and the logical length come from `cache`.
CompactMap compact_chunked_text(const CacheMap& cache, const ChunkPlan& plan,
                                std::span<const CacheMap> local_chunks, std::span<const QueryMap> chunk_queries,
                                const std::optional<BudgetSchedule>& schedule, const CompactionConfig& cfg,
                                int threads = 1);

}  // namespace kvc
