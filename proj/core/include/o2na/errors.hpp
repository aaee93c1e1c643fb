#pragma once

#include <stdexcept>
#include <string>

namespace o2na {

// Base of every error thrown by the library. The CLI maps the concrete
// subclass onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes do not line up for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An index (token id, embedding row, object id) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (non-scalar loss, empty input, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inconsistent data (caption lengths, id alignment, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Model parameters are unusable (NaN, missing tensors).
class ModelStateError : public Error {
 public:
  using Error::Error;
};

// A loss became NaN or infinite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace o2na
