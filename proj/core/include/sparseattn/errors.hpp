#pragma once

#include <stdexcept>
#include <string>

namespace sparseattn {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible shapes, ranks or axes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range argument (k, label, empty input).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Mathematical domain violation, e.g. log of a non-positive value.
class DomainError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered in values or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed data files.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace sparseattn
