#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nowcast {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible shapes passed to a numeric kernel.
struct DimensionError : Error {
  using Error::Error;
};

// Cholesky factorization hit a non-positive pivot.
struct NotSpdError : Error {
  std::size_t pivot;
  NotSpdError(const std::string& msg, std::size_t pivot_index)
      : Error(msg), pivot(pivot_index) {}
};

// Malformed CSV/JSON input. `row` is 1-based, 0 when not applicable.
struct ParseError : Error {
  std::size_t row;
  explicit ParseError(const std::string& msg, std::size_t row_number = 0)
      : Error(msg), row(row_number) {}
};

// Invalid configuration, missing file, or violated precondition.
struct ConfigError : Error {
  using Error::Error;
};

// Numeric failure at runtime (non-finite state, likelihood decrease, ...).
// `index` is the step or timestep where it happened, when applicable.
struct NumericError : Error {
  std::size_t index;
  explicit NumericError(const std::string& msg, std::size_t where = 0)
      : Error(msg), index(where) {}
};

}  // namespace nowcast
