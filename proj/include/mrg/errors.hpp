#pragma once

#include <stdexcept>

namespace mrg {

// Malformed or inconsistent input: files, scenes, configs, references.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor dimension mismatch. A kind of data error so it maps to the same
// process exit code when it escapes the CLI.
struct ShapeError : DataError {
  using DataError::DataError;
};

// Non-finite values where finite math was required (diverged training, NaN gradients).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mrg
