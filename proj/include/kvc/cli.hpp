// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kvc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

/// Entry point of the `kvc` tool. args[0] is the program name.
/// Diagnostics go to `err`; `inspect` and `eval` without --output print to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kvc::cli
