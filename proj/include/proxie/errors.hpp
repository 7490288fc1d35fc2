#pragma once

#include <stdexcept>
#include <string>

namespace proxie {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes, so keep the hierarchy flat.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing column, bad role assignment, malformed configuration document.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A cell that does not parse as a finite number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : Error(what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Values parse but violate a data contract (non-binary treatment, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Invalid simulation or estimator parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
 public:
  RankDeficiencyError(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition() const { return condition_; }

 private:
  double condition_;
};

// Fewer moment conditions than parameters.
class IdentificationError : public Error {
 public:
  IdentificationError(const std::string& what, long deficit)
      : Error(what), deficit_(deficit) {}
  long deficit() const { return deficit_; }

 private:
  long deficit_;
};

// Non-finite residual or similar failure while evaluating a moment system.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// An estimator precondition on the data does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class CellSupportError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class NearSingularityError : public PreconditionError {
 public:
  NearSingularityError(const std::string& what, double det)
      : PreconditionError(what), det_(det) {}
  double det() const { return det_; }

 private:
  double det_;
};

class InferenceUnreliableError : public Error {
 public:
  using Error::Error;
};

}  // namespace proxie
