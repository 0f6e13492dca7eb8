#pragma once

#include <stdexcept>
#include <string>

namespace glt {

/// Invalid combination of settings or inputs (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checksum or format validation failure on a persisted artifact (CLI exit code 3).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A statistical test was handed too few usable observations.
class InsufficientDataError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// Zero-norm rows reaching a loss, where cosine is undefined.
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace glt
