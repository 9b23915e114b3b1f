// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvc/compaction.hpp"
#include "kvc/schedule.hpp"

namespace kvc {

/// Loss of one head as a function of its own compaction ratio, other heads held fixed.
struct SensitivityCurve {
    HeadId head;
    std::vector<double> grid;  // strictly increasing, in (0, 1]
    std::vector<double> loss;
    std::optional<double> baseline_ratio;

    void validate() const;
};

/// Piecewise-linear on the grid, constant beyond the last point.
double interp_curve(const SensitivityCurve& curve, double rho);

/// Share step equivalent to a ratio-space step of 0.0125.
double default_eta(std::size_t num_heads, double r0);

struct AllocationTrace {
    int swaps = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Greedy exchange: start uniform, repeatedly move `eta` of share from the head whose loss
/// rises least to the head whose loss falls most, while that strictly lowers total loss.
BudgetSchedule allocate_budgets(std::span<const SensitivityCurve> curves, double eta, double r0,
                                AllocationTrace* trace = nullptr);

/// Sum over heads of interp_curve at rho_h = p_h * H * r0.
double schedule_loss(std::span<const SensitivityCurve> curves, const BudgetSchedule& schedule);

/// Compacts every head at `baseline_ratio` except `head`, which sweeps `grid`; records the change
/// in summed held-out attention-output error relative to the all-baseline configuration.
SensitivityCurve measure_sensitivity(const CacheMap& cache, const QueryMap& queries,
                                     const QueryMap& heldout, const HeadId& head,
                                     const std::vector<double>& grid, double baseline_ratio,
                                     const CompactionConfig& cfg, int threads = 1);

std::string curves_to_json(std::span<const SensitivityCurve> curves);
std::vector<SensitivityCurve> curves_from_json(const std::string& text);

}  // namespace kvc
