// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "kvc/cli.hpp"

int main(int argc, char** argv) {
    return kvc::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
