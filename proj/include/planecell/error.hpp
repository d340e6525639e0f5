#pragma once

#include <stdexcept>
#include <string>

namespace planecell {

/// Invalid argument or configuration value.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Caller broke an operation precondition (e.g. non-adjacent candidate).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Unsupported or malformed binary file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text file; message carries the line number.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Geometry that cannot be represented (zero depth, plane through the
/// camera centre, ...).
class DegenerateError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace planecell
