#pragma once

#include <stdexcept>
#include <string>

namespace cann {

// Invalid distribution parameter or special-function argument.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Matrix/vector widths that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent input data (files, records, configs).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimizer escapes: non-finite losses, diverging coefficients.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cann
