#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace lowrank {

// printf-style string builder for error messages.
inline std::string strfmt(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

// Incompatible matrix/tensor shapes; the message names both operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameters, presets, or run configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// File parsing / serialization failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where the contract requires finite data.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace lowrank
