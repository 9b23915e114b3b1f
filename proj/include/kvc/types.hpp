// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kvc {

/// Row-major f32 matrix; rows are tokens or queries, columns are head dimensions.
using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;

/// f64 working types used for reductions and factorizations.
using MatrixD = Eigen::MatrixXd;
using VectorD = Eigen::VectorXd;

using IndexList = std::vector<std::int64_t>;

struct HeadId {
    int layer = 0;
    int head = 0;

    auto operator<=>(const HeadId&) const = default;

    std::string prefix() const {
        return "layer" + std::to_string(layer) + ".head" + std::to_string(head);
    }
    std::string tensor(const std::string& kind) const { return prefix() + "." + kind; }
};

enum class DType { f32, bf16 };

}  // namespace kvc
