#pragma once

#include <stdexcept>
#include <string>

namespace asched {

// Argument outside the mathematical domain of an operation (t outside a
// spline boundary, negative time, non-PD covariance, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or inconsistent input data. Carries an optional row number and
// field name so parsers can point at the offending record.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, long row = -1, std::string field = {})
      : std::runtime_error(what), row_(row), field_(std::move(field)) {}

  long row() const noexcept { return row_; }
  const std::string& field() const noexcept { return field_; }

 private:
  long row_;
  std::string field_;
};

// A numerical procedure failed or produced a result that must be flagged
// (quadrature breakdown, tail-dominated moments, non-finite likelihood).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, std::string flag = {})
      : std::runtime_error(what), flag_(std::move(flag)) {}

  const std::string& flag() const noexcept { return flag_; }

 private:
  std::string flag_;
};

// Invalid command-line or API usage.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace asched
