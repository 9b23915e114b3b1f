// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <string>

#include "kvc/types.hpp"

namespace kvc {

/// Per-head share of the total KV budget. Shares sum to 1.
struct BudgetSchedule {
    std::map<HeadId, double> shares;
    double r0 = 0.05;

    std::size_t num_heads() const { return shares.size(); }
    void validate() const;
};

BudgetSchedule uniform_schedule(std::span<const HeadId> heads, double r0 = 0.05);

/// Layer-linear profile: every head in layer l gets weight interpolated from
/// `first_weight` (layer 0) to `last_weight` (last layer), then normalized.
BudgetSchedule linear_layer_schedule(int num_layers, int heads_per_layer, double first_weight,
                                     double last_weight, double r0 = 0.05);

/// Shares induced by a global top-k selection: count_h / total.
BudgetSchedule schedule_from_counts(const std::map<HeadId, Eigen::Index>& counts, double r0 = 0.05);

/// Tokens kept per head at overall ratio r: targets p_h * H * r * T_h, rescaled so the total is
/// round(r * sum T_h), rounded by largest remainder, each clamped into [1, T_h].
std::map<HeadId, Eigen::Index> shares_to_counts(const BudgetSchedule& schedule, double ratio,
                                                const std::map<HeadId, Eigen::Index>& lengths);

/// Uniform-ratio count for one head: clamp(round(ratio * T), 1, T).
Eigen::Index ratio_to_count(double ratio, Eigen::Index length);

std::string schedule_to_json(const BudgetSchedule& schedule);
BudgetSchedule schedule_from_json(const std::string& text);

}  // namespace kvc
