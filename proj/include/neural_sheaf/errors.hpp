#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace neural_sheaf {

/// Matrix or vector shapes that do not agree with the declared layer sizes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite or otherwise malformed numerical input.
class InvalidInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad configuration value (unknown activation, p <= 1 for a p-norm loss, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operation is not defined for the sheaf as configured (e.g. pinned sheaves
/// where a square restricted coboundary is required).
class UnsupportedStructureError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// State blew up during integration.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error("diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace neural_sheaf
