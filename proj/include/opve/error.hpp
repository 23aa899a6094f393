#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace opve {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or ordering problems in logs and datasets (empty log, K/d mismatch).
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Out-of-range arguments (clip floor, weight vectors, variances).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// An estimator needs information the log does not carry (true propensities).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// A nuisance trajectory uses a model fit on data at or after the step it scores.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Propensity at the realized action is (numerically) zero while the target weight is not.
class DivisionHazardError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace opve
