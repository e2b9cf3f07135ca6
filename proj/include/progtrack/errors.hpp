#pragma once

#include <stdexcept>
#include <string>

namespace progtrack {

// Caller broke a documented precondition (shape mismatch, bad argument).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// log/sqrt/pow evaluated outside their real domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// NaN or infinity showed up where a finite value is required.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UndefinedMetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration problem; `field` is the dotted path of the offending key.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string field, const std::string& what)
      : std::runtime_error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace progtrack
