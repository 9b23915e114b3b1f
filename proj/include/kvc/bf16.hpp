// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

namespace kvc::bf16 {

// bf16 is the upper half of an IEEE-754 binary32. Narrowing rounds to nearest even.
std::uint16_t from_float(float x);
float to_float(std::uint16_t bits);

/// Rounds x to the nearest bf16-representable value, returned as f32.
inline float round_trip(float x) { return to_float(from_float(x)); }

void round_in_place(std::span<float> values);

}  // namespace kvc::bf16
