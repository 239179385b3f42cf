#pragma once

#include <stdexcept>
#include <string>

namespace anchorlab {

// Shapes of operands do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value (odd embedding dim, lambda outside [0,1], ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Timestep or index outside its valid range.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Operation called in the wrong lifecycle state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Numerical singularity or non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or parameter.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

// A required input artifact (checkpoint, csv) is missing or unreadable.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace anchorlab
