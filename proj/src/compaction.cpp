// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/compaction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kvc/bf16.hpp"
#include "kvc/error.hpp"
#include "kvc/parallel.hpp"

namespace kvc {

std::string method_name(Method m) {
    switch (m) {
        case Method::omp: return "omp";
        case Method::omp_fast: return "omp_fast";
        case Method::highest_attention: return "highest_attention";
        case Method::selection_only: return "selection_only";
    }
    return "omp";
}

std::string beta_mode_name(BetaMode m) {
    switch (m) {
        case BetaMode::nnls_box: return "nnls_box";
        case BetaMode::omp_prune: return "omp_prune";
        case BetaMode::zero: return "zero";
    }
    return "zero";
}

std::string value_mode_name(ValueMode m) { return m == ValueMode::lstsq ? "lstsq" : "original"; }

CompactionConfig CompactionConfig::preset(Method method) {
    CompactionConfig c;
    c.method = method;
    switch (method) {
        case Method::omp:
            break;
        case Method::omp_fast:
            c.omp_k = 4;
            c.omp_tau = 2;
            break;
        case Method::highest_attention:
            c.beta_mode = BetaMode::nnls_box;
            break;
        case Method::selection_only:
            c.beta_mode = BetaMode::zero;
            c.value_mode = ValueMode::original;
            break;
    }
    return c;
}

void CompactionConfig::validate() const {
    require(ratio > 0.0 && ratio <= 1.0, "compaction ratio must lie in (0, 1]");
    require(omp_k >= 1 && omp_tau >= 1, "OMP k and tau must be >= 1");
    require(scale >= 0.0, "logit scale must be positive (or 0 for 1/sqrt(d))");
    if (method == Method::selection_only)
        require(beta_mode == BetaMode::zero && value_mode == ValueMode::original,
                "selection_only requires beta_mode=zero and value_mode=original");
}

BoxBounds beta_bounds(BetaMode mode) {
    switch (mode) {
        case BetaMode::nnls_box: return BoxBounds{std::exp(-3.0), std::exp(3.0)};
        case BetaMode::omp_prune: return BoxBounds{1e-6, std::exp(7.0)};
        case BetaMode::zero: break;
    }
    return BoxBounds{};
}

int beta_iterations(BetaMode mode) { return mode == BetaMode::nnls_box ? 2 : 0; }

Vector fit_beta(const Matrix& queries, const Matrix& keys, const Vector& key_bias,
                const Matrix& compact_keys, BetaMode mode, double scale) {
    require(queries.rows() >= 1, "fit_beta needs at least one query");
    require(compact_keys.rows() >= 1 && compact_keys.rows() <= keys.rows(), "fit_beta: need 1 <= t <= T");
    require(compact_keys.cols() == keys.cols(), "fit_beta: key width mismatch");
    if (mode == BetaMode::zero) return Vector::Zero(compact_keys.rows());

    const MatrixD original = scaled_logits(queries, keys, key_bias, scale);
    const VectorD shift = original.rowwise().maxCoeff();
    MatrixD design = scaled_logits(queries, compact_keys, Vector{}, scale);
    design.colwise() -= shift;
    design = design.array().exp().matrix();
    MatrixD shifted = original;
    shifted.colwise() -= shift;
    const VectorD target = shifted.array().exp().rowwise().sum().matrix();

    const VectorD w = solve_nnls_pgd(design, target, beta_iterations(mode), beta_bounds(mode));
    return w.array().log().cast<float>().matrix();
}

namespace {

MatrixD softmax_rows(MatrixD logits) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        logits.row(i).array() -= logits.row(i).maxCoeff();
        logits.row(i) = logits.row(i).array().exp().matrix();
        logits.row(i) /= logits.row(i).sum();
    }
    return logits;
}

Matrix gather_rows(const Matrix& m, const IndexList& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
    return out;
}

Vector gather(const Vector& v, const IndexList& idx) {
    Vector out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) out[static_cast<Eigen::Index>(r)] = v[idx[r]];
    return out;
}

void round_bf16(Matrix& m) { bf16::round_in_place(std::span<float>(m.data(), static_cast<std::size_t>(m.size()))); }
void round_bf16(Vector& v) { bf16::round_in_place(std::span<float>(v.data(), static_cast<std::size_t>(v.size()))); }

}  // namespace

Matrix fit_values(const Matrix& queries, const Matrix& keys, const Matrix& values, const Vector& key_bias,
                  const Matrix& compact_keys, const Vector& compact_bias, double scale) {
    require(compact_keys.rows() >= 1, "fit_values needs at least one compact key");
    const MatrixD target = attend(queries, keys, values, key_bias, scale).output;
    const MatrixD design = softmax_rows(scaled_logits(queries, compact_keys, compact_bias, scale));
    return solve_lstsq(design, target).cast<float>();
}

CompactHead compact_head(const HeadCache& head, const QuerySet& queries, Eigen::Index budget,
                         const CompactionConfig& cfg) {
    cfg.validate();
    head.validate();
    require(queries.size() >= 1, "compact_head: empty reference query set");
    require(queries.queries.cols() == head.dim(), "compact_head: query width differs from head dim");
    require(budget >= 1 && budget <= head.size(), "compact_head: t must lie in [1, T]");

    const double scale = cfg.scale_for(head.dim());
    const Matrix& q = queries.queries;

    // Keeping every row reproduces the block exactly; any fit could only approximate it.
    if (budget == head.size()) {
        CompactHead out = passthrough(head);
        if (cfg.dtype_out == DType::bf16) {
            round_bf16(out.keys);
            round_bf16(out.bias);
            round_bf16(out.values);
        }
        out.storage = cfg.dtype_out;
        return out;
    }

    SelectionResult sel;
    const bool use_omp = cfg.method == Method::omp || cfg.method == Method::omp_fast;
    if (use_omp) {
        OmpOptions opts;
        opts.budget = budget;
        opts.keys_per_step = cfg.omp_k;
        opts.refit_interval = cfg.omp_tau;
        sel = select_omp(build_mass_features(q, head.keys, head.bias, scale), opts);
    } else {
        sel = select_topk(score_keys(q, head.keys, cfg.agg, scale, head.bias), budget);
    }

    CompactHead out;
    out.keys = gather_rows(head.keys, sel.indices);
    const auto t = out.keys.rows();

    // Keys -> bias -> values, in that order.
    if (cfg.beta_mode == BetaMode::zero) {
        // A re-compacted head keeps the bias its retained rows already carried.
        out.bias = head.bias.size() > 0 ? gather(head.bias, sel.indices) : Vector::Zero(t);
    } else if (use_omp && cfg.beta_mode == BetaMode::omp_prune) {
        // OMP weights multiply features that already include any existing bias.
        out.bias = sel.weights->array().log().cast<float>().matrix();
        if (head.bias.size() > 0) out.bias += gather(head.bias, sel.indices);
    } else {
        out.bias = fit_beta(q, head.keys, head.bias, out.keys, cfg.beta_mode, scale);
    }

    if (cfg.value_mode == ValueMode::lstsq)
        out.values = fit_values(q, head.keys, head.values, head.bias, out.keys, out.bias, scale);
    else
        out.values = gather_rows(head.values, sel.indices);

    if (cfg.dtype_out == DType::bf16) {
        round_bf16(out.keys);
        round_bf16(out.bias);
        round_bf16(out.values);
    }
    out.storage = cfg.dtype_out;
    out.logical_length = head.logical_length;
    out.source_indices = sel.indices;
    out.positions.reserve(sel.indices.size());
    for (auto i : sel.indices) out.positions.push_back(head.positions[static_cast<std::size_t>(i)]);
    return out;
}

CompactHead passthrough(const HeadCache& head) {
    CompactHead out;
    out.keys = head.keys;
    out.values = head.values;
    out.bias = head.bias.size() > 0 ? head.bias : Vector::Zero(head.size());
    out.logical_length = head.logical_length;
    out.positions = head.positions;
    IndexList idx(static_cast<std::size_t>(head.size()));
    std::iota(idx.begin(), idx.end(), 0);
    out.source_indices = std::move(idx);
    return out;
}

std::map<HeadId, Eigen::Index> head_budgets(const CacheMap& cache, const std::optional<BudgetSchedule>& schedule,
                                            double ratio) {
    std::map<HeadId, Eigen::Index> out;
    if (!schedule) {
        for (const auto& [id, h] : cache) out[id] = ratio_to_count(ratio, h.size());
        return out;
    }
    std::map<HeadId, Eigen::Index> lengths;
    for (const auto& [id, share] : schedule->shares) {
        auto it = cache.find(id);
        require(it != cache.end(), "schedule names head " + id.prefix() + " which is not in the cache");
        lengths[id] = it->second.size();
    }
    return shares_to_counts(*schedule, ratio, lengths);
}

CompactMap compact_cache(const CacheMap& cache, const QueryMap& queries,
                         const std::optional<BudgetSchedule>& schedule, const CompactionConfig& cfg, int threads) {
    cfg.validate();
    const auto budgets = head_budgets(cache, schedule, cfg.ratio);
    for (const auto& [id, t] : budgets)
        require(queries.count(id) > 0, "no reference queries for head " + id.prefix());

    std::vector<HeadId> ids;
    for (const auto& [id, h] : cache) ids.push_back(id);
    std::vector<CompactHead> results(ids.size());
    parallel_for(ids.size(), threads, [&](std::size_t i) {
        const auto& id = ids[i];
        const auto& head = cache.at(id);
        auto b = budgets.find(id);
        if (b == budgets.end()) {
            results[i] = passthrough(head);
            results[i].storage = cfg.dtype_out;
        } else {
            results[i] = compact_head(head, queries.at(id), b->second, cfg);
        }
    });
    CompactMap out;
    for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], std::move(results[i]));
    return out;
}

void ChunkPlan::validate(std::int64_t length) const {
    require(fixed_prefix_len >= 0 && fixed_suffix_len >= 0, "fixed block lengths must be >= 0");
    require(fixed_prefix_len + fixed_suffix_len < length, "fixed blocks leave no room for chunks");
    require(!spans.empty(), "chunk plan has no spans");
    std::int64_t cursor = fixed_prefix_len;
    for (const auto& [s, e] : spans) {
        require(s < e, "empty or reversed chunk span");
        require(s >= cursor, "chunk spans overlap, are out of order, or intrude on the prefix");
        require(s == cursor, "chunk spans must be contiguous");
        cursor = e;
    }
    require(cursor == length - fixed_suffix_len, "chunk spans must end where the fixed suffix begins");
}

HeadCache slice_head(const HeadCache& head, std::int64_t begin, std::int64_t end) {
    require(begin >= 0 && begin < end && end <= head.size(), "slice out of range");
    HeadCache out;
    out.keys = head.keys.middleRows(begin, end - begin);
    out.values = head.values.middleRows(begin, end - begin);
    if (head.bias.size() > 0) out.bias = head.bias.segment(begin, end - begin);
    out.positions.assign(head.positions.begin() + begin, head.positions.begin() + end);
    out.logical_length = head.logical_length;
    out.rope = head.rope;
    return out;
}

namespace {

CompactHead merge_pieces(const std::vector<CompactHead>& pieces, const std::vector<std::int64_t>& row_offsets,
                         std::int64_t logical_length, DType storage) {
    Eigen::Index total = 0;
    for (const auto& p : pieces) total += p.size();
    const auto d = pieces.front().keys.cols();
    CompactHead out;
    out.keys.resize(total, d);
    out.values.resize(total, d);
    out.bias.resize(total);
    IndexList src;
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        const auto& p = pieces[i];
        out.keys.middleRows(row, p.size()) = p.keys;
        out.values.middleRows(row, p.size()) = p.values;
        out.bias.segment(row, p.size()) = p.bias;
        for (auto s : *p.source_indices) src.push_back(s + row_offsets[i]);
        out.positions.insert(out.positions.end(), p.positions.begin(), p.positions.end());
        row += p.size();
    }
    out.source_indices = std::move(src);
    out.logical_length = logical_length;
    out.storage = storage;
    return out;
}

std::int64_t common_length(const CacheMap& cache) {
    require(!cache.empty(), "cache has no heads");
    const auto length = cache.begin()->second.size();
    for (const auto& [id, h] : cache) require(h.size() == length, "heads differ in length; chunking needs a common T");
    return length;
}

CompactMap merge_chunks(const CacheMap& cache, const ChunkPlan& plan, const std::vector<CompactMap>& chunks,
                        DType storage) {
    const auto length = common_length(cache);
    CompactMap out;
    for (const auto& [id, head] : cache) {
        std::vector<CompactHead> pieces;
        std::vector<std::int64_t> offsets;
        if (plan.fixed_prefix_len > 0) {
            pieces.push_back(passthrough(slice_head(head, 0, plan.fixed_prefix_len)));
            offsets.push_back(0);
        }
        for (std::size_t c = 0; c < chunks.size(); ++c) {
            pieces.push_back(chunks[c].at(id));
            offsets.push_back(plan.spans[c].first);
        }
        if (plan.fixed_suffix_len > 0) {
            pieces.push_back(passthrough(slice_head(head, length - plan.fixed_suffix_len, length)));
            offsets.push_back(length - plan.fixed_suffix_len);
        }
        out.emplace(id, merge_pieces(pieces, offsets, head.logical_length, storage));
    }
    return out;
}

}  // namespace

CompactMap compact_chunked(const CacheMap& cache, const ChunkPlan& plan, std::span<const QueryMap> chunk_queries,
                           const std::optional<BudgetSchedule>& schedule, const CompactionConfig& cfg, int threads) {
    plan.validate(common_length(cache));
    require(chunk_queries.size() == plan.spans.size(), "need one query map per chunk");

    std::vector<CompactMap> chunks;
    for (std::size_t c = 0; c < plan.spans.size(); ++c) {
        CacheMap slice;
        for (const auto& [id, head] : cache)
            slice.emplace(id, slice_head(head, plan.spans[c].first, plan.spans[c].second));
        chunks.push_back(compact_cache(slice, chunk_queries[c], schedule, cfg, threads));
    }
    return merge_chunks(cache, plan, chunks, cfg.dtype_out);
}

CompactMap compact_chunked_text(const CacheMap& cache, const ChunkPlan& plan,
                                std::span<const CacheMap> local_chunks, std::span<const QueryMap> chunk_queries,
                                const std::optional<BudgetSchedule>& schedule, const CompactionConfig& cfg,
                                int threads) {
    plan.validate(common_length(cache));
    require(local_chunks.size() == plan.spans.size(), "need one local cache per chunk");
    require(chunk_queries.size() == plan.spans.size(), "need one query map per chunk");

    std::vector<CompactMap> chunks;
    for (std::size_t c = 0; c < plan.spans.size(); ++c) {
        const auto [start, end] = plan.spans[c];
        for (const auto& [id, head] : cache) {
            auto it = local_chunks[c].find(id);
            require(it != local_chunks[c].end(), "local chunk is missing head " + id.prefix());
            require(it->second.size() == end - start, "local chunk length differs from its span");
        }
        CompactMap compacted = compact_cache(local_chunks[c], chunk_queries[c], schedule, cfg, threads);
        for (auto& [id, ch] : compacted) {
            const auto& global = cache.at(id);
            const std::int64_t delta = global.positions[static_cast<std::size_t>(start)] -
                                       local_chunks[c].at(id).positions.front();
            if (delta != 0) {
                ch.keys = rope_rotate(ch.keys, delta, global.rope);
                if (cfg.dtype_out == DType::bf16) round_bf16(ch.keys);
            }
            for (auto& p : ch.positions) p += delta;
        }
        chunks.push_back(std::move(compacted));
    }
    return merge_chunks(cache, plan, chunks, cfg.dtype_out);
}

}  // namespace kvc
