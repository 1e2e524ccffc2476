// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mcgr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; `line()` is 1-based, 0 when not line-oriented.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A computation produced or received a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace mcgr
