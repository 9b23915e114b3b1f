// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/cache_io.hpp"

#include <cstdio>
#include <numeric>
#include <set>

#include "kvc/error.hpp"

namespace kvc {

namespace {

/// Heads named by any tensor "layer{L}.head{H}.<kind>".
std::set<HeadId> heads_with(const Container& c, const std::string& kind) {
    std::set<HeadId> out;
    for (const auto& e : c.manifest.tensors) {
        int layer = -1, head = -1;
        char rest[64] = {};
        if (std::sscanf(e.name.c_str(), "layer%d.head%d.%63s", &layer, &head, rest) == 3 && kind == rest)
            out.insert({layer, head});
    }
    return out;
}

const Tensor& get(const Container& c, const std::string& name) {
    auto it = c.tensors.find(name);
    require(it != c.tensors.end(), "container is missing tensor " + name);
    return it->second;
}

IndexList positions_for(const Container& c, const HeadId& id, Eigen::Index rows) {
    auto it = c.tensors.find(id.tensor("positions"));
    if (it != c.tensors.end()) {
        auto p = to_indices(it->second);
        require(static_cast<Eigen::Index>(p.size()) == rows, id.tensor("positions") + " has the wrong length");
        return p;
    }
    IndexList p(static_cast<std::size_t>(rows));
    std::iota(p.begin(), p.end(), 0);
    return p;
}

void put(Container& c, const std::string& name, Tensor t, DType dtype = DType::f32) {
    c.manifest.add_tensor(name, dtype, t.shape);
    c.tensors.emplace(name, std::move(t));
}

}  // namespace

CacheMeta CacheMeta::from(const Manifest& m) {
    return {m.head_dim, m.num_layers, m.kv_heads_per_layer, m.logit_scale, m.rope, m.logical_length};
}

Manifest CacheMeta::manifest() const {
    Manifest m;
    m.head_dim = head_dim;
    m.num_layers = num_layers;
    m.kv_heads_per_layer = kv_heads_per_layer;
    m.logit_scale = logit_scale;
    m.rope = rope;
    m.logical_length = logical_length;
    return m;
}

CacheMap cache_from_container(const Container& c) {
    const auto raw = heads_with(c, "K");
    const auto compact = heads_with(c, "Ck");
    require(!raw.empty() || !compact.empty(), "container holds no K or Ck tensors");
    CacheMap out;
    for (const auto& id : raw) {
        HeadCache h;
        h.keys = to_matrix(get(c, id.tensor("K")));
        h.values = to_matrix(get(c, id.tensor("V")));
        h.positions = positions_for(c, id, h.keys.rows());
        h.logical_length = c.manifest.logical_length;
        h.rope = c.manifest.rope;
        require(h.keys.cols() == c.manifest.head_dim, id.tensor("K") + " width differs from head_dim");
        h.validate();
        out.emplace(id, std::move(h));
    }
    for (const auto& id : compact) {
        require(!out.count(id), "head " + id.prefix() + " is stored both raw and compacted");
        HeadCache h;
        h.keys = to_matrix(get(c, id.tensor("Ck")));
        h.values = to_matrix(get(c, id.tensor("Cv")));
        h.bias = to_vector(get(c, id.tensor("beta")));
        h.positions = positions_for(c, id, h.keys.rows());
        h.logical_length = c.manifest.logical_length;
        h.rope = c.manifest.rope;
        require(h.keys.cols() == c.manifest.head_dim, id.tensor("Ck") + " width differs from head_dim");
        h.validate();
        out.emplace(id, std::move(h));
    }
    return out;
}

QueryMap queries_from_container(const Container& c) {
    QueryMap out;
    for (const auto& id : heads_with(c, "Q")) {
        QuerySet q;
        q.queries = to_matrix(get(c, id.tensor("Q")));
        const auto& attrs = c.manifest.attributes;
        if (auto it = attrs.find(id.tensor("Q.provenance")); it != attrs.end()) q.provenance = provenance_from(it->second);
        if (auto it = attrs.find(id.tensor("Q.seed")); it != attrs.end()) q.seed = std::stoull(it->second);
        out.emplace(id, std::move(q));
    }
    return out;
}

CompactMap compact_from_container(const Container& c) {
    CompactMap out;
    for (const auto& id : heads_with(c, "Ck")) {
        CompactHead h;
        h.keys = to_matrix(get(c, id.tensor("Ck")));
        h.values = to_matrix(get(c, id.tensor("Cv")));
        h.bias = to_vector(get(c, id.tensor("beta")));
        h.positions = positions_for(c, id, h.keys.rows());
        h.logical_length = c.manifest.logical_length;
        if (auto it = c.tensors.find(id.tensor("indices")); it != c.tensors.end()) h.source_indices = to_indices(it->second);
        if (const auto* e = c.manifest.find(id.tensor("Ck"))) h.storage = e->dtype;
        h.validate();
        out.emplace(id, std::move(h));
    }
    require(!out.empty(), "container holds no compacted heads");
    return out;
}

Container cache_to_container(const CacheMeta& meta, const CacheMap& cache, const QueryMap* queries) {
    Container c;
    c.manifest = meta.manifest();
    for (const auto& [id, h] : cache) {
        put(c, id.tensor("K"), make_tensor(h.keys));
        put(c, id.tensor("V"), make_tensor(h.values));
        put(c, id.tensor("positions"), make_tensor(std::span<const std::int64_t>(h.positions)));
        require(h.bias.size() == 0, "cache_to_container cannot store a biased head; save it as compacted");
    }
    if (queries) {
        const auto q = queries_to_container(meta, *queries);
        for (const auto& e : q.manifest.tensors) put(c, e.name, q.tensors.at(e.name));
        c.manifest.attributes.insert(q.manifest.attributes.begin(), q.manifest.attributes.end());
    }
    return c;
}

Container queries_to_container(const CacheMeta& meta, const QueryMap& queries) {
    Container c;
    c.manifest = meta.manifest();
    for (const auto& [id, q] : queries) {
        put(c, id.tensor("Q"), make_tensor(q.queries));
        c.manifest.attributes[id.tensor("Q.provenance")] = provenance_name(q.provenance);
        if (q.seed) c.manifest.attributes[id.tensor("Q.seed")] = std::to_string(*q.seed);
    }
    return c;
}

Container compact_to_container(const CacheMeta& meta, const CompactMap& compact) {
    Container c;
    c.manifest = meta.manifest();
    for (const auto& [id, h] : compact) {
        put(c, id.tensor("Ck"), make_tensor(h.keys), h.storage);
        put(c, id.tensor("Cv"), make_tensor(h.values), h.storage);
        put(c, id.tensor("beta"), make_tensor(h.bias), h.storage);
        put(c, id.tensor("positions"), make_tensor(std::span<const std::int64_t>(h.positions)));
        if (h.source_indices)
            put(c, id.tensor("indices"), make_tensor(std::span<const std::int64_t>(*h.source_indices)));
    }
    return c;
}

void save(const Container& c, const std::filesystem::path& path) {
    write_container(c.manifest, c.tensors, path);
}

}  // namespace kvc
