// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/container.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "kvc/bf16.hpp"
#include "kvc/error.hpp"

static_assert(std::endian::native == std::endian::little, "KVC1 I/O assumes a little-endian host");

namespace kvc {

using nlohmann::json;

namespace {

std::uint64_t align_up(std::uint64_t x) {
    return (x + kAlignment - 1) / kAlignment * kAlignment;
}

std::string rope_kind_name(RopeKind k) { return k == RopeKind::half_split ? "half_split" : "none"; }

RopeKind rope_kind_from(const std::string& s) {
    if (s == "half_split") return RopeKind::half_split;
    if (s == "none") return RopeKind::none;
    throw IoError("unknown rope kind '" + s + "'");
}

DType dtype_from(const std::string& s) {
    if (s == "f32") return DType::f32;
    if (s == "bf16") return DType::bf16;
    throw IoError("unknown dtype '" + s + "'");
}

std::uint64_t data_start(std::uint32_t header_len) { return align_up(8u + header_len); }

}  // namespace

const TensorEntry* Manifest::find(const std::string& name) const {
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const TensorEntry& e) { return e.name == name; });
    return it == tensors.end() ? nullptr : &*it;
}

void Manifest::add_tensor(std::string name, DType dtype, std::vector<std::int64_t> shape) {
    tensors.push_back(TensorEntry{std::move(name), dtype, std::move(shape), 0, 0});
}

std::size_t dtype_size(DType dtype) { return dtype == DType::f32 ? 4 : 2; }

std::string dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "bf16"; }

std::int64_t element_count(std::span<const std::int64_t> shape) {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

std::string to_canonical_json(const Manifest& m) {
    // nlohmann::json objects are std::map backed, so keys serialize sorted.
    json j;
    j["version"] = m.version;
    j["head_dim"] = m.head_dim;
    j["num_layers"] = m.num_layers;
    j["kv_heads_per_layer"] = m.kv_heads_per_layer;
    j["logit_scale"] = m.logit_scale;
    j["rope"] = {{"kind", rope_kind_name(m.rope.kind)},
                 {"base", m.rope.base},
                 {"applied_to_keys", m.rope.applied_to_keys}};
    j["logical_length"] = m.logical_length;
    if (m.chunk_spans) {
        json spans = json::array();
        for (const auto& [s, e] : *m.chunk_spans) spans.push_back({s, e});
        j["chunk_spans"] = spans;
    }
    j["attributes"] = json::object();
    for (const auto& [k, v] : m.attributes) j["attributes"][k] = v;
    json index = json::array();
    for (const auto& e : m.tensors) {
        index.push_back({{"name", e.name},
                         {"dtype", dtype_name(e.dtype)},
                         {"shape", e.shape},
                         {"offset", e.offset},
                         {"nbytes", e.nbytes}});
    }
    j["tensors"] = index;
    return j.dump();
}

Manifest manifest_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("manifest JSON parse failure: ") + e.what());
    }
    try {
        Manifest m;
        m.version = j.at("version").get<int>();
        m.head_dim = j.at("head_dim").get<int>();
        m.num_layers = j.at("num_layers").get<int>();
        m.kv_heads_per_layer = j.at("kv_heads_per_layer").get<int>();
        m.logit_scale = j.at("logit_scale").get<double>();
        const auto& r = j.at("rope");
        m.rope.kind = rope_kind_from(r.at("kind").get<std::string>());
        m.rope.base = r.at("base").get<double>();
        m.rope.applied_to_keys = r.at("applied_to_keys").get<bool>();
        m.logical_length = j.at("logical_length").get<std::int64_t>();
        if (j.contains("chunk_spans")) {
            std::vector<Span> spans;
            for (const auto& s : j["chunk_spans"])
                spans.emplace_back(s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>());
            m.chunk_spans = std::move(spans);
        }
        if (j.contains("attributes"))
            m.attributes = j["attributes"].get<std::map<std::string, std::string>>();
        for (const auto& e : j.at("tensors")) {
            m.tensors.push_back(TensorEntry{e.at("name").get<std::string>(),
                                            dtype_from(e.at("dtype").get<std::string>()),
                                            e.at("shape").get<std::vector<std::int64_t>>(),
                                            e.at("offset").get<std::uint64_t>(),
                                            e.at("nbytes").get<std::uint64_t>()});
        }
        return m;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed manifest: ") + e.what());
    }
}

void assign_layout(Manifest& m) {
    std::uint64_t cursor = 0;
    for (auto& e : m.tensors) {
        const auto n = element_count(e.shape);
        e.offset = cursor;
        e.nbytes = static_cast<std::uint64_t>(std::max<std::int64_t>(n, 0)) * dtype_size(e.dtype);
        cursor = align_up(cursor + e.nbytes);
    }
}

std::vector<std::string> validate_manifest(const Manifest& m) {
    std::vector<std::string> out;
    if (m.version != kFormatVersion) out.push_back("unsupported version " + std::to_string(m.version));
    if (m.head_dim < 0) out.push_back("negative head_dim");
    if (m.num_layers < 0 || m.kv_heads_per_layer < 0) out.push_back("negative layer/head count");
    if (!(m.logit_scale > 0.0) || !std::isfinite(m.logit_scale)) out.push_back("logit_scale must be positive and finite");
    if (m.rope.kind == RopeKind::half_split && m.head_dim % 2 != 0)
        out.push_back("half_split rope requires even head_dim");
    if (m.logical_length < 0) out.push_back("negative logical_length");
    if (m.chunk_spans) {
        for (const auto& [s, e] : *m.chunk_spans)
            if (s < 0 || e < s) out.push_back("invalid chunk span [" + std::to_string(s) + ", " + std::to_string(e) + ")");
    }

    std::set<std::string> names;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (const auto& e : m.tensors) {
        if (!names.insert(e.name).second) out.push_back("duplicate tensor name '" + e.name + "'");
        bool shape_ok = true;
        for (auto s : e.shape) shape_ok = shape_ok && s >= 0;
        if (!shape_ok) {
            out.push_back("negative dimension in shape of '" + e.name + "'");
        } else {
            const auto expect = static_cast<std::uint64_t>(element_count(e.shape)) * dtype_size(e.dtype);
            if (expect != e.nbytes)
                out.push_back("size mismatch for '" + e.name + "': nbytes " + std::to_string(e.nbytes) +
                              " != " + std::to_string(expect));
        }
        if (e.offset % kAlignment != 0) out.push_back("offset of '" + e.name + "' is not 64-byte aligned");
        if (e.nbytes > 0) ranges.emplace_back(e.offset, e.offset + e.nbytes);
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i)
        if (ranges[i].first < ranges[i - 1].second) out.push_back("overlapping tensor ranges");
    return out;
}

std::vector<std::uint8_t> encode_container(const Manifest& manifest, const TensorMap& tensors) {
    Manifest m = manifest;
    assign_layout(m);
    if (auto v = validate_manifest(m); !v.empty()) throw ValidationError("invalid manifest: " + v.front());
    for (const auto& e : m.tensors) {
        auto it = tensors.find(e.name);
        if (it == tensors.end()) throw ValidationError("no data for tensor '" + e.name + "'");
        if (it->second.shape != e.shape) throw ValidationError("shape mismatch for tensor '" + e.name + "'");
        if (static_cast<std::int64_t>(it->second.data.size()) != element_count(e.shape))
            throw ValidationError("payload size mismatch for tensor '" + e.name + "'");
    }

    const std::string header = to_canonical_json(m);
    const auto header_len = static_cast<std::uint32_t>(header.size());
    const std::uint64_t start = data_start(header_len);
    std::uint64_t total = start;
    for (const auto& e : m.tensors) total = std::max(total, start + e.offset + e.nbytes);

    std::vector<std::uint8_t> bytes(total, 0);
    std::memcpy(bytes.data(), kMagic, 4);
    std::memcpy(bytes.data() + 4, &header_len, 4);
    std::memcpy(bytes.data() + 8, header.data(), header.size());
    for (const auto& e : m.tensors) {
        const auto& src = tensors.at(e.name).data;
        auto* dst = bytes.data() + start + e.offset;
        if (e.dtype == DType::f32) {
            std::memcpy(dst, src.data(), e.nbytes);
        } else {
            for (std::size_t i = 0; i < src.size(); ++i) {
                const std::uint16_t b = bf16::from_float(src[i]);
                std::memcpy(dst + 2 * i, &b, 2);
            }
        }
    }
    return bytes;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) throw IoError("truncated container: missing preamble");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("bad magic: not a KVC1 container");
    std::uint32_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 4, 4);
    if (8u + static_cast<std::uint64_t>(header_len) > bytes.size())
        throw IoError("truncated container: header extends past end of file");

    Container c;
    c.manifest = manifest_from_json(
        std::string(reinterpret_cast<const char*>(bytes.data() + 8), header_len));
    if (auto v = validate_manifest(c.manifest); !v.empty()) throw IoError("invalid manifest: " + v.front());

    const std::uint64_t start = data_start(header_len);
    for (const auto& e : c.manifest.tensors) {
        if (start + e.offset + e.nbytes > bytes.size())
            throw IoError("tensor '" + e.name + "' offset out of bounds");
        Tensor t;
        t.shape = e.shape;
        t.data.resize(static_cast<std::size_t>(element_count(e.shape)));
        const auto* src = bytes.data() + start + e.offset;
        if (e.dtype == DType::f32) {
            std::memcpy(t.data.data(), src, e.nbytes);
        } else {
            for (std::size_t i = 0; i < t.data.size(); ++i) {
                std::uint16_t b = 0;
                std::memcpy(&b, src + 2 * i, 2);
                t.data[i] = bf16::to_float(b);
            }
        }
        c.tensors.emplace(e.name, std::move(t));
    }
    return c;
}

void write_container(const Manifest& manifest, const TensorMap& tensors,
                     const std::filesystem::path& path) {
    const auto bytes = encode_container(manifest, tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_container(bytes);
}

Tensor make_tensor(const Matrix& m) {
    Tensor t;
    t.shape = {m.rows(), m.cols()};
    t.data.assign(m.data(), m.data() + m.size());
    return t;
}

Tensor make_tensor(const Vector& v) {
    Tensor t;
    t.shape = {v.size()};
    t.data.assign(v.data(), v.data() + v.size());
    return t;
}

Tensor make_tensor(std::span<const std::int64_t> values) {
    Tensor t;
    t.shape = {static_cast<std::int64_t>(values.size())};
    for (auto v : values) t.data.push_back(static_cast<float>(v));
    return t;
}

Matrix to_matrix(const Tensor& t) {
    require(t.shape.size() == 2, "expected a rank-2 tensor");
    Matrix m(t.shape[0], t.shape[1]);
    std::copy(t.data.begin(), t.data.end(), m.data());
    return m;
}

Vector to_vector(const Tensor& t) {
    require(t.shape.size() == 1, "expected a rank-1 tensor");
    return Eigen::Map<const Vector>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

IndexList to_indices(const Tensor& t) {
    require(t.shape.size() == 1, "expected a rank-1 tensor");
    IndexList out;
    out.reserve(t.data.size());
    for (float f : t.data) out.push_back(static_cast<std::int64_t>(std::llround(f)));
    return out;
}

}  // namespace kvc
