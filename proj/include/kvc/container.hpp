// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kvc/types.hpp"

namespace kvc {

// KVC1 layout:
//   "KVC1" | u32 LE header length | canonical JSON manifest | zero pad to 64 | data section
// Tensor offsets are relative to the start of the data section, which is itself 64-byte aligned.

inline constexpr char kMagic[4] = {'K', 'V', 'C', '1'};
inline constexpr std::size_t kAlignment = 64;
inline constexpr int kFormatVersion = 1;

enum class RopeKind { half_split, none };

struct RopeParams {
    RopeKind kind = RopeKind::half_split;
    double base = 10000.0;
    bool applied_to_keys = true;

    bool operator==(const RopeParams&) const = default;
};

struct TensorEntry {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::int64_t> shape;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;

    bool operator==(const TensorEntry&) const = default;
};

using Span = std::pair<std::int64_t, std::int64_t>;

struct Manifest {
    int version = kFormatVersion;
    int head_dim = 0;
    int num_layers = 0;
    int kv_heads_per_layer = 0;
    double logit_scale = 0.0;
    RopeParams rope;
    std::int64_t logical_length = 0;
    std::optional<std::vector<Span>> chunk_spans;
    /// Free-form string attributes, e.g. "layer0.head0.Q.provenance" -> "random".
    std::map<std::string, std::string> attributes;
    std::vector<TensorEntry> tensors;

    bool operator==(const Manifest&) const = default;

    const TensorEntry* find(const std::string& name) const;
    /// Appends an entry with offset/nbytes left for assign_layout.
    void add_tensor(std::string name, DType dtype, std::vector<std::int64_t> shape);
};

/// Dense f32 payload; bf16 entries are widened on load.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    bool operator==(const Tensor&) const = default;
};

using TensorMap = std::map<std::string, Tensor>;

struct Container {
    Manifest manifest;
    TensorMap tensors;
};

std::size_t dtype_size(DType dtype);
std::string dtype_name(DType dtype);
std::int64_t element_count(std::span<const std::int64_t> shape);

std::string to_canonical_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text);

/// Packs entries back to back at 64-byte aligned offsets in declaration order.
void assign_layout(Manifest& manifest);

/// Returns one human-readable line per broken invariant; empty when the manifest is valid.
std::vector<std::string> validate_manifest(const Manifest& manifest);

std::vector<std::uint8_t> encode_container(const Manifest& manifest, const TensorMap& tensors);
Container decode_container(std::span<const std::uint8_t> bytes);

/// Lays out `manifest`, validates it against `tensors` and writes the file.
void write_container(const Manifest& manifest, const TensorMap& tensors,
                     const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

Tensor make_tensor(const Matrix& m);
Tensor make_tensor(const Vector& v);
Tensor make_tensor(std::span<const std::int64_t> values);
Matrix to_matrix(const Tensor& t);
Vector to_vector(const Tensor& t);
IndexList to_indices(const Tensor& t);

}  // namespace kvc
