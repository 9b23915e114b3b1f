// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>

#include "kvc/bf16.hpp"

using namespace kvc;

namespace {

// Reference rounding: pick the nearer of the two bf16 neighbours, ties to the even mantissa.
float reference_round(float x) {
    const auto bits = std::bit_cast<std::uint32_t>(x);
    const float lo = std::bit_cast<float>(bits & 0xFFFF0000u);
    const float hi = std::bit_cast<float>((bits & 0xFFFF0000u) + 0x10000u);
    const double dlo = std::abs(static_cast<double>(x) - lo);
    const double dhi = std::abs(static_cast<double>(hi) - x);
    if (dlo < dhi) return lo;
    if (dhi < dlo) return hi;
    return ((bits >> 16) & 1u) == 0 ? lo : hi;
}

}  // namespace

TEST_CASE("exactly representable values survive") {
    for (float x : {0.0f, -0.0f, 1.0f, -2.0f, 0.5f, 256.0f, 1.5f}) CHECK(bf16::round_trip(x) == x);
    CHECK(bf16::from_float(1.0f) == 0x3F80);
    CHECK(bf16::to_float(0x3F80) == 1.0f);
}

TEST_CASE("ties round to even") {
    // 1 + 2^-8 sits halfway between 1 and 1 + 2^-7; the even neighbour is 1.
    CHECK(bf16::round_trip(1.0f + 0x1.0p-8f) == 1.0f);
    // 1 + 3 * 2^-8 sits halfway between 1 + 2^-7 (odd) and 1 + 2^-6 (even).
    CHECK(bf16::round_trip(1.0f + 3 * 0x1.0p-8f) == 1.0f + 0x1.0p-6f);
}

TEST_CASE("matches nearest-neighbour reference on random finite floats") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<std::uint32_t> bits;
    int checked = 0;
    while (checked < 20000) {
        const float x = std::bit_cast<float>(bits(rng));
        if (!std::isfinite(x) || std::abs(x) > 3.0e38f) continue;
        REQUIRE(bf16::round_trip(x) == reference_round(x));
        ++checked;
    }
}

TEST_CASE("special values") {
    CHECK(std::isinf(bf16::round_trip(std::numeric_limits<float>::infinity())));
    CHECK(std::isnan(bf16::round_trip(std::numeric_limits<float>::quiet_NaN())));
    CHECK(std::isnan(bf16::round_trip(std::bit_cast<float>(0x7F800001u))));
}
