#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace appvae {

// Error taxonomy used across the toolkit. The CLI maps these onto exit
// codes: usage errors 1 (handled by the parser), ParseError/ValidationError
// 2, NumericalError 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a documented invariant (bad category id,
// negative time, shape mismatch, K mismatch, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss, divergent optimization, or other numeric breakdown.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace appvae
