// SPDX-License-Identifier: MIT
//
// Shared error type and small utilities used across the library.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedban {

/// Library-wide exception. Messages start with a stable machine-readable
/// code ("NotPD", "BadDimension", ...) followed by a human explanation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws an Error whose message is "<code>: <what>".
[[noreturn]] inline void fail(const std::string& code, const std::string& what) {
  throw Error(code + ": " + what);
}

/// True iff n is a power of two (n >= 1).
constexpr bool is_pow2(std::int64_t n) { return n >= 1 && (n & (n - 1)) == 0; }

/// Smallest power of two >= n (n >= 1).
constexpr std::int64_t next_pow2(std::int64_t n) {
  std::int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace fedban
