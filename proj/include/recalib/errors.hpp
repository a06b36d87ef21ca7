#pragma once

#include <stdexcept>
#include <string>

namespace recalib {

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Fit problem has no finite optimum (e.g. unbounded temperature).
struct DegenerateInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Objective became NaN/Inf during optimization.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace recalib
