#pragma once

#include <stdexcept>
#include <string>

namespace mmjigsaw {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extent or shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in values, gradients or losses; overflow in exp.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad or inconsistent input data (degenerate volumes, empty datasets, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmjigsaw
