#pragma once

#include <stdexcept>
#include <string>

namespace otalign {

// Error taxonomy mapped to CLI exit codes: validation = 1, numerical = 2, I/O = 3.
class Error : public std::runtime_error {
 public:
  Error(std::string msg, int exit_code)
      : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

// Bad arguments, malformed inputs, violated preconditions.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::string msg) : Error(std::move(msg), 1) {}
};

// Malformed file content; message carries the line number.
class ParseError : public ValidationError {
 public:
  explicit ParseError(std::string msg) : ValidationError(std::move(msg)) {}
};

// A metric that has no defined value on this input (e.g. no non-edges).
class UndefinedMetricError : public ValidationError {
 public:
  explicit UndefinedMetricError(std::string msg) : ValidationError(std::move(msg)) {}
};

// Overflow, non-finite intermediates, singular systems, divergence.
class NumericalError : public Error {
 public:
  explicit NumericalError(std::string msg) : Error(std::move(msg), 2) {}
};

// Missing/unreadable/unwritable files.
class IoError : public Error {
 public:
  explicit IoError(std::string msg) : Error(std::move(msg), 3) {}
};

}  // namespace otalign
