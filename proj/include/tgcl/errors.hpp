#pragma once

#include <stdexcept>
#include <string>

namespace tgcl {

// Validation-class errors (CLI exit code 1).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };
struct DegenerateInputError : Error { using Error::Error; };

// Parse errors carry the 1-based line number when known (0 otherwise).
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line_no = 0)
      : Error(line_no ? "line " + std::to_string(line_no) + ": " + what : what),
        line(line_no) {}
  std::size_t line;
};

// I/O class errors (CLI exit code 2).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LoadError : IoError { using IoError::IoError; };

}  // namespace tgcl
