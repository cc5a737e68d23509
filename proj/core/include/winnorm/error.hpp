#pragma once

#include <stdexcept>
#include <string>

namespace winnorm {

// Exit-code classes used by the command-line front end.
enum class ErrorClass { usage = 1, numerical = 2, integrity = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorClass::usage, "shape mismatch: " + what) {}
};

/// Domain violation (division by zero, log/sqrt of a bad value, empty region, non-finite result).
class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& what)
      : Error(ErrorClass::numerical, "degenerate input: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorClass::usage, what) {}
};

class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& what) : Error(ErrorClass::integrity, what) {}
};

/// Raised by the trainers when the loss stops being finite. `diagnostics` is a JSON document.
class NumericalAbort : public Error {
 public:
  NumericalAbort(const std::string& what, std::string diagnostics)
      : Error(ErrorClass::numerical, what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

}  // namespace winnorm
