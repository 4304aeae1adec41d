#pragma once

#include <stdexcept>
#include <string>

namespace gquant {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid quantizer, model or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A value outside the mathematical domain of an operation (NaN input, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (bad codes, bad files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Parse failure with a location; `line()` is 1-based, 0 when not applicable.
class ParseError : public DataError {
 public:
  ParseError(const std::string& where, std::size_t line, const std::string& what)
      : DataError(where + (line ? ":" + std::to_string(line) : std::string{}) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace gquant
