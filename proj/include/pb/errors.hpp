#pragma once
#include <stdexcept>
#include <string>

namespace pb {

// Shape/length mismatches between meshes, rigs, matrices.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (files, indices, invariant violations).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures: NaN inputs, saturated concentrations, failed convergence.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pb
