#pragma once

#include <stdexcept>
#include <string>

namespace sslgrade {

// Shape or argument contract violated by the caller.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Missing, unreadable or malformed input artifacts.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint container problems (magic, version, truncation, mismatch).
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// NaN/Inf or otherwise degenerate numerics.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sslgrade
