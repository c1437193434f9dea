#pragma once

#include <stdexcept>
#include <string>

namespace maskdiff {

// Argument outside the mathematical domain of a function (t outside [0,1], p outside (0,1)).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller violated a documented precondition.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A token state that the forward process cannot produce was supplied.
class InconsistentStateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bayes conditioning on an event of probability zero.
class ConditioningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Enumeration would exceed the configured state/step budget.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched dimensions between two objects that must agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file or configuration. `line` is 0 when unknown.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Requested combination is not defined (e.g. simple weighting in log-SNR form).
class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace maskdiff
