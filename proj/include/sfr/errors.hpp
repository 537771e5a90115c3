#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sfr {

/// Base class of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Errors caused by bad input (documents, configs, datasets). The CLI maps
/// these to exit code 2; every other Error maps to exit code 3.
class InputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public InputError {
 public:
  using InputError::InputError;
};

class ValidationError : public InputError {
 public:
  using InputError::InputError;
};

class NonFiniteError : public InputError {
 public:
  NonFiniteError(const std::string& where, std::size_t row)
      : InputError(where + ": non-finite value at row " + std::to_string(row)), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class InsufficientShots : public InputError {
 public:
  using InputError::InputError;
};

class InfeasibleSpec : public InputError {
 public:
  using InputError::InputError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class SingularCovariance : public Error {
 public:
  using Error::Error;
};

class UnknownLabel : public Error {
 public:
  using Error::Error;
};

class DuplicateLabel : public Error {
 public:
  using Error::Error;
};

class EmptyTestSet : public Error {
 public:
  using Error::Error;
};

class TooFewSessions : public Error {
 public:
  using Error::Error;
};

}  // namespace sfr
