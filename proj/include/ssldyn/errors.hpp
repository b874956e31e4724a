#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssldyn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad shapes, out-of-range parameters, malformed inputs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver ran out of iterations.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Rank-deficient input where full rank is required.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// A training run or integration produced non-finite or runaway values.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A required input file does not exist or cannot be opened.
class DataFileError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssldyn
