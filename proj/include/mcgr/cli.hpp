// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace mcgr::cli {

/// Exit codes: 0 success, 1 failure (bad data, I/O, numerics), 2 usage or
/// contract violation.
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mcgr::cli
