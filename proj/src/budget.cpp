// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/budget.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "kvc/error.hpp"
#include "kvc/metrics.hpp"
#include "kvc/parallel.hpp"

namespace kvc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schedules

void BudgetSchedule::validate() const {
    require(!shares.empty(), "budget schedule is empty");
    require(r0 > 0.0 && r0 <= 1.0, "schedule r0 must lie in (0, 1]");
    double sum = 0.0;
    for (const auto& [id, p] : shares) {
        require(p >= 0.0 && std::isfinite(p), "schedule shares must be finite and non-negative");
        sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "schedule shares must sum to 1");
}

BudgetSchedule uniform_schedule(std::span<const HeadId> heads, double r0) {
    require(!heads.empty(), "uniform_schedule needs at least one head");
    BudgetSchedule s;
    s.r0 = r0;
    for (const auto& h : heads) s.shares[h] = 1.0 / static_cast<double>(heads.size());
    return s;
}

BudgetSchedule linear_layer_schedule(int num_layers, int heads_per_layer, double first_weight,
                                     double last_weight, double r0) {
    require(num_layers >= 1 && heads_per_layer >= 1, "linear_layer_schedule: need layers and heads");
    require(first_weight >= 0.0 && last_weight >= 0.0 && first_weight + last_weight > 0.0,
            "linear_layer_schedule: weights must be non-negative and not both zero");
    BudgetSchedule s;
    s.r0 = r0;
    double total = 0.0;
    for (int l = 0; l < num_layers; ++l) {
        const double frac = num_layers == 1 ? 0.0 : static_cast<double>(l) / (num_layers - 1);
        const double w = first_weight + (last_weight - first_weight) * frac;
        for (int h = 0; h < heads_per_layer; ++h) {
            s.shares[{l, h}] = w;
            total += w;
        }
    }
    for (auto& [id, p] : s.shares) p /= total;
    return s;
}

BudgetSchedule schedule_from_counts(const std::map<HeadId, Eigen::Index>& counts, double r0) {
    double total = 0.0;
    for (const auto& [id, c] : counts) total += static_cast<double>(c);
    require(total > 0.0, "schedule_from_counts: no tokens selected");
    BudgetSchedule s;
    s.r0 = r0;
    for (const auto& [id, c] : counts) s.shares[id] = static_cast<double>(c) / total;
    return s;
}

Eigen::Index ratio_to_count(double ratio, Eigen::Index length) {
    require(ratio > 0.0 && ratio <= 1.0, "ratio must lie in (0, 1]");
    const auto t = static_cast<Eigen::Index>(std::llround(ratio * static_cast<double>(length)));
    return std::clamp<Eigen::Index>(t, 1, length);
}

std::map<HeadId, Eigen::Index> shares_to_counts(const BudgetSchedule& schedule, double ratio,
                                                const std::map<HeadId, Eigen::Index>& lengths) {
    schedule.validate();
    require(ratio > 0.0 && ratio <= 1.0, "overall ratio must lie in (0, 1]");
    const auto heads = static_cast<double>(schedule.num_heads());

    std::vector<HeadId> ids;
    std::vector<double> weight;
    std::vector<Eigen::Index> cap;
    Eigen::Index total_len = 0;
    for (const auto& [id, p] : schedule.shares) {
        auto it = lengths.find(id);
        require(it != lengths.end(), "no length for head " + id.prefix());
        require(it->second >= 1, "head " + id.prefix() + " is empty");
        ids.push_back(id);
        cap.push_back(it->second);
        weight.push_back(p * heads * ratio * static_cast<double>(it->second));
        total_len += it->second;
    }
    const auto budget = static_cast<Eigen::Index>(std::llround(ratio * static_cast<double>(total_len)));
    require(budget >= static_cast<Eigen::Index>(ids.size()),
            "global budget is smaller than one token per head");

    const std::size_t n = ids.size();
    // Water-filling: find lambda with sum_h clamp(lambda * weight_h, 1, cap_h) == budget. The sum is
    // piecewise linear in lambda with breakpoints at 1/w and cap/w, so walk them in order.
    auto clamped = [&](std::size_t h, double lambda) {
        return std::clamp(lambda * weight[h], 1.0, static_cast<double>(cap[h]));
    };
    std::vector<double> breaks{0.0};
    for (std::size_t h = 0; h < n; ++h) {
        if (weight[h] <= 0.0) continue;
        breaks.push_back(1.0 / weight[h]);
        breaks.push_back(static_cast<double>(cap[h]) / weight[h]);
    }
    std::sort(breaks.begin(), breaks.end());
    const auto target = static_cast<double>(budget);
    double lambda = breaks.back();
    for (std::size_t i = 1; i < breaks.size(); ++i) {
        double at_hi = 0.0;
        for (std::size_t h = 0; h < n; ++h) at_hi += clamped(h, breaks[i]);
        if (at_hi < target) continue;
        // linear on [breaks[i-1], breaks[i]]: only heads strictly inside their box move
        const double mid = 0.5 * (breaks[i - 1] + breaks[i]);
        double fixed_sum = 0.0, slope = 0.0;
        for (std::size_t h = 0; h < n; ++h) {
            const double x = mid * weight[h];
            if (weight[h] > 0.0 && x > 1.0 && x < static_cast<double>(cap[h]))
                slope += weight[h];
            else
                fixed_sum += clamped(h, mid);
        }
        lambda = slope > 0.0 ? (target - fixed_sum) / slope : breaks[i];
        break;
    }
    std::vector<double> ideal(n);
    for (std::size_t h = 0; h < n; ++h) ideal[h] = clamped(h, lambda);

    // floor, then hand out what is left by largest fractional part
    Eigen::Index remaining = budget;
    std::vector<Eigen::Index> count(n, 0);
    std::vector<std::size_t> order(n);
    for (std::size_t h = 0; h < n; ++h) {
        count[h] = static_cast<Eigen::Index>(std::floor(ideal[h]));
        remaining -= count[h];
        order[h] = h;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ideal[a] - std::floor(ideal[a]) > ideal[b] - std::floor(ideal[b]);
    });
    while (remaining > 0) {
        bool placed = false;
        for (auto h : order) {
            if (remaining == 0) break;
            if (count[h] < cap[h]) {
                ++count[h];
                --remaining;
                placed = true;
            }
        }
        if (!placed) break;
    }
    // rounding can overshoot by a token; take it back from the smallest fractional parts
    for (auto it = order.rbegin(); remaining < 0 && it != order.rend(); ++it) {
        if (count[*it] > 1) {
            --count[*it];
            ++remaining;
        }
    }

    std::map<HeadId, Eigen::Index> out;
    for (std::size_t h = 0; h < n; ++h) out[ids[h]] = std::clamp<Eigen::Index>(count[h], 1, cap[h]);
    return out;
}

std::string schedule_to_json(const BudgetSchedule& s) {
    json shares = json::array();
    for (const auto& [id, p] : s.shares) shares.push_back({{"layer", id.layer}, {"head", id.head}, {"share", p}});
    return json{{"r0", s.r0}, {"shares", shares}}.dump();
}

BudgetSchedule schedule_from_json(const std::string& text) {
    try {
        const auto j = json::parse(text);
        BudgetSchedule s;
        s.r0 = j.at("r0").get<double>();
        for (const auto& e : j.at("shares"))
            s.shares[{e.at("layer").get<int>(), e.at("head").get<int>()}] = e.at("share").get<double>();
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed schedule: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Sensitivity curves and greedy allocation

void SensitivityCurve::validate() const {
    require(!grid.empty(), "sensitivity curve has an empty grid");
    require(grid.size() == loss.size(), "sensitivity curve grid and loss lengths differ");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        require(grid[i] > 0.0 && grid[i] <= 1.0, "sensitivity grid ratios must lie in (0, 1]");
        require(std::isfinite(loss[i]), "sensitivity losses must be finite");
        if (i > 0) require(grid[i] > grid[i - 1], "sensitivity grid must be strictly increasing");
    }
    if (baseline_ratio)
        require(std::find(grid.begin(), grid.end(), *baseline_ratio) != grid.end(),
                "sensitivity grid must contain the baseline ratio");
}

namespace {
constexpr double kGridTol = 1e-12;
}

double interp_curve(const SensitivityCurve& c, double rho) {
    require(!c.grid.empty() && c.grid.size() == c.loss.size(), "malformed sensitivity curve");
    require(rho >= c.grid.front() - kGridTol, "ratio below the curve's grid minimum");
    if (rho <= c.grid.front()) return c.loss.front();
    if (rho >= c.grid.back()) return c.loss.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(c.grid.begin(), c.grid.end(), rho) - c.grid.begin());
    const auto lo = hi - 1;
    const double x0 = c.grid[lo], x1 = c.grid[hi];
    const double a = (rho - x0) / (x1 - x0);
    return c.loss[lo] + a * (c.loss[hi] - c.loss[lo]);
}

double default_eta(std::size_t num_heads, double r0) {
    return 0.0125 / (static_cast<double>(num_heads) * r0);
}

double schedule_loss(std::span<const SensitivityCurve> curves, const BudgetSchedule& schedule) {
    const auto heads = static_cast<double>(curves.size());
    double total = 0.0;
    for (const auto& c : curves) total += interp_curve(c, schedule.shares.at(c.head) * heads * schedule.r0);
    return total;
}

BudgetSchedule allocate_budgets(std::span<const SensitivityCurve> curves, double eta, double r0,
                                AllocationTrace* trace) {
    require(!curves.empty(), "allocate_budgets needs at least one curve");
    require(eta > 0.0, "allocation step eta must be positive");
    require(r0 > 0.0 && r0 <= 1.0, "r0 must lie in (0, 1]");
    for (const auto& c : curves) c.validate();

    const std::size_t n = curves.size();
    const double heads = static_cast<double>(n);
    const double step = eta * heads * r0;  // eta' in ratio space
    // shares are 1/H + units[h] * eta; integer units keep the lattice exact
    std::vector<long> units(n, 0);
    auto ratio_of = [&](std::size_t h) { return (1.0 / heads + static_cast<double>(units[h]) * eta) * heads * r0; };

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> gain(n), cost(n);
    int swaps = 0;
    double initial = 0.0;
    for (std::size_t h = 0; h < n; ++h) initial += interp_curve(curves[h], ratio_of(h));

    constexpr int kMaxSwaps = 10'000'000;
    while (swaps < kMaxSwaps) {
        for (std::size_t h = 0; h < n; ++h) {
            const double rho = ratio_of(h);
            const double here = interp_curve(curves[h], rho);
            gain[h] = rho + step <= 1.0 + kGridTol ? here - interp_curve(curves[h], rho + step) : -inf;
            const bool can_shrink = rho >= step - kGridTol && rho - step >= curves[h].grid.front() - kGridTol;
            cost[h] = can_shrink ? interp_curve(curves[h], std::max(rho - step, curves[h].grid.front())) - here : inf;
        }
        // best (receiver, donor) pair with receiver != donor; ties to the lowest indices
        double best = -inf;
        std::size_t to = n, from = n;
        for (std::size_t b = 0; b < n; ++b) {
            if (gain[b] == -inf) continue;
            for (std::size_t a = 0; a < n; ++a) {
                if (a == b || cost[a] == inf) continue;
                const double delta = gain[b] - cost[a];
                if (delta > best) {
                    best = delta;
                    to = b;
                    from = a;
                }
            }
        }
        if (to == n || !(gain[to] > cost[from])) break;
        ++units[to];
        --units[from];
        ++swaps;
    }

    BudgetSchedule s;
    s.r0 = r0;
    double sum = 0.0;
    for (std::size_t h = 0; h < n; ++h) sum += std::max(0.0, 1.0 / heads + static_cast<double>(units[h]) * eta);
    for (std::size_t h = 0; h < n; ++h)
        s.shares[curves[h].head] = std::max(0.0, 1.0 / heads + static_cast<double>(units[h]) * eta) / sum;

    if (trace) {
        trace->swaps = swaps;
        trace->initial_loss = initial;
        double final_loss = 0.0;
        for (std::size_t h = 0; h < n; ++h) final_loss += interp_curve(curves[h], ratio_of(h));
        trace->final_loss = final_loss;
    }
    return s;
}

SensitivityCurve measure_sensitivity(const CacheMap& cache, const QueryMap& queries, const QueryMap& heldout,
                                     const HeadId& head, const std::vector<double>& grid, double baseline_ratio,
                                     const CompactionConfig& cfg, int threads) {
    require(cache.count(head) > 0, "unknown head " + head.prefix());
    require(!grid.empty(), "sensitivity grid is empty");
    for (const auto& [id, h] : cache) {
        require(queries.count(id) > 0, "no reference queries for head " + id.prefix());
        require(heldout.count(id) > 0, "no held-out queries for head " + id.prefix());
    }

    CompactionConfig base_cfg = cfg;
    base_cfg.ratio = baseline_ratio;
    const CompactMap base = compact_cache(cache, queries, std::nullopt, base_cfg, threads);

    std::map<HeadId, double> base_err;
    for (const auto& [id, h] : cache)
        base_err[id] = output_error(h, base.at(id), heldout.at(id).queries, cfg.scale_for(h.dim())).mean;

    auto total_with = [&](double target_err) {
        double total = 0.0;
        for (const auto& [id, e] : base_err) total += id == head ? target_err : e;
        return total;
    };
    const double reference = total_with(base_err.at(head));

    const auto& target = cache.at(head);
    SensitivityCurve curve;
    curve.head = head;
    curve.grid = grid;
    curve.baseline_ratio = baseline_ratio;
    curve.loss.resize(grid.size());
    std::vector<double> err(grid.size());
    parallel_for(grid.size(), threads, [&](std::size_t g) {
        const auto t = ratio_to_count(grid[g], target.size());
        const CompactHead c = compact_head(target, queries.at(head), t, cfg);
        err[g] = output_error(target, c, heldout.at(head).queries, cfg.scale_for(target.dim())).mean;
    });
    for (std::size_t g = 0; g < grid.size(); ++g) curve.loss[g] = total_with(err[g]) - reference;
    return curve;
}

std::string curves_to_json(std::span<const SensitivityCurve> curves) {
    json arr = json::array();
    for (const auto& c : curves) {
        json e = {{"layer", c.head.layer}, {"head", c.head.head}, {"grid", c.grid}, {"loss", c.loss}};
        if (c.baseline_ratio) e["baseline_ratio"] = *c.baseline_ratio;
        arr.push_back(e);
    }
    return json{{"curves", arr}}.dump();
}

std::vector<SensitivityCurve> curves_from_json(const std::string& text) {
    try {
        const auto j = json::parse(text);
        std::vector<SensitivityCurve> out;
        for (const auto& e : j.at("curves")) {
            SensitivityCurve c;
            c.head = {e.at("layer").get<int>(), e.at("head").get<int>()};
            c.grid = e.at("grid").get<std::vector<double>>();
            c.loss = e.at("loss").get<std::vector<double>>();
            if (e.contains("baseline_ratio")) c.baseline_ratio = e["baseline_ratio"].get<double>();
            c.validate();
            out.push_back(std::move(c));
        }
        return out;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed curves document: ") + e.what());
    }
}

}  // namespace kvc
