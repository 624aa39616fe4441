#pragma once

#include <stdexcept>
#include <string>

namespace debias {

// Base for every error raised by the toolkit. The CLI maps ValidationError
// subclasses to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A required column is missing or the header is malformed.
class SchemaError : public ValidationError {
 public:
  SchemaError(const std::string& msg, std::string column)
      : ValidationError(msg), column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

/// A cell holds a value outside its domain.
class ValueError : public ValidationError {
 public:
  ValueError(const std::string& msg, std::string row_id = {})
      : ValidationError(msg), row_id_(std::move(row_id)) {}
  const std::string& row_id() const noexcept { return row_id_; }

 private:
  std::string row_id_;
};

/// Duplicate ids, unknown ids, or keys that do not belong to a partition.
class IntegrityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A correlation/marginal triple that has no valid 2x2 contingency table.
class FeasibilityError : public ValidationError {
 public:
  FeasibilityError(const std::string& msg, std::string cell)
      : ValidationError(msg), cell_(std::move(cell)) {}
  const std::string& cell() const noexcept { return cell_; }

 private:
  std::string cell_;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Correlation or AUC requested on inputs for which it is not defined.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or a similar numerical failure during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

}  // namespace debias
