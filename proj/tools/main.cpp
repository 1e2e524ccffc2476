// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "mcgr/cli.hpp"

int main(int argc, char** argv) { return mcgr::cli::run(argc, argv, std::cout, std::cerr); }
