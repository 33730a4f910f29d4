#pragma once

#include <stdexcept>
#include <string>

namespace nowcast {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed magic, version, or header field in a binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload shorter or longer than its header promises.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Invalid values (NaN, negative rates) inside otherwise well-formed data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not agree with an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or singular systems during numeric work.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A gradient cache used twice, or a backward pass without its forward.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// A forecaster that violates the 9-in / 3-out frame contract.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace nowcast
