#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace taxon {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Laplacian minor is singular or has a non-positive determinant.
class NumericalDegeneracy : public Error {
 public:
  using Error::Error;
};

// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A request was refused because of its size (e.g. tree enumeration for n > 7).
class RefusalError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Every importance weight vanished.
class DegeneratePosterior : public Error {
 public:
  using Error::Error;
};

class ExhaustedPool : public Error {
 public:
  using Error::Error;
};

class BudgetExhausted : public Error {
 public:
  using Error::Error;
};

// Name clash, e.g. inserting a concept label that already exists.
class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

// Malformed input file; line is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Persisted state has a format version this build cannot read.
class MigrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace taxon
