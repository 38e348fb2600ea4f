#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hrrformer {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or extents that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Token ids, labels or gather indices out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters (non power-of-two H, h not dividing H, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// A frequency bin of a vector is too small to invert.
class SingularInverseError : public Error {
 public:
  SingularInverseError(std::size_t bin, double magnitude, double threshold)
      : Error("exact inverse is singular: |F(y)[" + std::to_string(bin) +
              "]| = " + std::to_string(magnitude) + " < " +
              std::to_string(threshold)),
        bin_(bin),
        magnitude_(magnitude) {}

  std::size_t bin() const noexcept { return bin_; }
  double magnitude() const noexcept { return magnitude_; }

 private:
  std::size_t bin_;
  double magnitude_;
};

// Reading a dataset from disk failed.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : Error("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace hrrformer
