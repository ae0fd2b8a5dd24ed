#pragma once

#include <stdexcept>
#include <string>

namespace nsr {

// Error categories surfaced by the library. The CLI maps `kind()` to the
// machine-readable error line it prints on failure.

class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what) : Error("invalid_argument", what) {}
};

struct NumericInputError : Error {
  explicit NumericInputError(const std::string& what) : Error("numeric_input", what) {}
};

struct ContractViolation : Error {
  explicit ContractViolation(const std::string& what) : Error("contract_violation", what) {}
};

struct EmptyBufferError : Error {
  explicit EmptyBufferError(const std::string& what) : Error("empty_buffer", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

}  // namespace nsr
