// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/bf16.hpp"

#include <bit>

namespace kvc::bf16 {

std::uint16_t from_float(float x) {
    const auto bits = std::bit_cast<std::uint32_t>(x);
    if ((bits & 0x7f800000u) == 0x7f800000u && (bits & 0x007fffffu) != 0) {
        // keep NaN quiet and non-zero after truncation
        return static_cast<std::uint16_t>((bits >> 16) | 0x0040u);
    }
    const std::uint32_t lsb = (bits >> 16) & 1u;
    const std::uint32_t rounded = bits + 0x7fffu + lsb;
    return static_cast<std::uint16_t>(rounded >> 16);
}

float to_float(std::uint16_t bits) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

void round_in_place(std::span<float> values) {
    for (auto& v : values) v = round_trip(v);
}

}  // namespace kvc::bf16
