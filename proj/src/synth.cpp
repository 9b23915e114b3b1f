// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/synth.hpp"

#include <cmath>
#include <numeric>

#include "kvc/error.hpp"

namespace kvc {

namespace {
constexpr std::uint64_t kStreamCache = 0;
constexpr std::uint64_t kStreamQueries = 1;
constexpr std::uint64_t kStreamHeldout = 2;
}  // namespace

void SynthOptions::validate() const {
    require(layers >= 1 && heads >= 1, "synth needs at least one layer and one head");
    require(length >= 1 && dim >= 1 && n_queries >= 1, "synth needs T, d and n_queries >= 1");
    require(n_heldout >= 0, "n_heldout must be >= 0");
    require(clusters >= 0, "cluster count must be >= 0");
    if (clusters > 0) {
        require(clusters <= length, "more clusters than tokens");
        require(length % clusters == 0, "T must be a multiple of the cluster count");
    }
    require(query_norm >= 0.0 && std::isfinite(query_norm), "query norm must be >= 0");
}

std::uint64_t derive_seed(std::uint64_t seed, const HeadId& id, std::uint64_t stream) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(id.layer));
    h = splitmix64(h ^ static_cast<std::uint64_t>(id.head));
    return splitmix64(h ^ stream);
}

SynthData synth(const SynthOptions& o) {
    o.validate();
    SynthData out;
    out.meta.head_dim = static_cast<int>(o.dim);
    out.meta.num_layers = o.layers;
    out.meta.kv_heads_per_layer = o.heads;
    out.meta.logit_scale = default_scale(o.dim);
    out.meta.rope.kind = o.dim % 2 == 0 ? RopeKind::half_split : RopeKind::none;
    out.meta.logical_length = o.length;
    const double qnorm = o.query_norm > 0.0 ? o.query_norm : std::sqrt(static_cast<double>(o.dim));

    for (int l = 0; l < o.layers; ++l) {
        for (int h = 0; h < o.heads; ++h) {
            const HeadId id{l, h};
            CounterRng rng(derive_seed(o.seed, id, kStreamCache));
            const Eigen::Index distinct = o.clusters > 0 ? o.clusters : o.length;
            Matrix k(distinct, o.dim), v(distinct, o.dim);
            for (Eigen::Index i = 0; i < distinct; ++i)
                for (Eigen::Index j = 0; j < o.dim; ++j) k(i, j) = static_cast<float>(rng.normal());
            for (Eigen::Index i = 0; i < distinct; ++i)
                for (Eigen::Index j = 0; j < o.dim; ++j) v(i, j) = static_cast<float>(rng.normal());

            HeadCache head;
            if (o.clusters > 0) {
                const auto block = o.length / o.clusters;
                head.keys.resize(o.length, o.dim);
                head.values.resize(o.length, o.dim);
                for (Eigen::Index r = 0; r < o.length; ++r) {
                    head.keys.row(r) = k.row(r / block);
                    head.values.row(r) = v.row(r / block);
                }
            } else {
                head.keys = std::move(k);
                head.values = std::move(v);
            }
            head.positions.resize(static_cast<std::size_t>(o.length));
            std::iota(head.positions.begin(), head.positions.end(), 0);
            head.logical_length = o.length;
            head.rope = out.meta.rope;
            out.cache.emplace(id, std::move(head));

            out.queries.emplace(id, gen_random_queries(o.n_queries, o.dim, qnorm,
                                                       derive_seed(o.seed, id, kStreamQueries)));
            if (o.n_heldout > 0)
                out.heldout.emplace(id, gen_random_queries(o.n_heldout, o.dim, qnorm,
                                                           derive_seed(o.seed, id, kStreamHeldout)));
        }
    }
    return out;
}

}  // namespace kvc
