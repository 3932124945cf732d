#pragma once

#include <stdexcept>
#include <string>

namespace bdgp {

/// Failure category; the CLI maps each one to a distinct exit status.
enum class ErrorCategory { Config, Io, Format, Numeric, Argument };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::Config, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCategory::Io, what) {}
};

/// Malformed file contents (bad header, bad run-length encoding, ...).
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorCategory::Format, what) {}
};

/// Payload or array size does not agree with the declared geometry.
struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error(ErrorCategory::Format, what) {}
};

/// A pixel flagged valid holds a non-finite value.
struct ValidityError : Error {
  ValidityError(const std::string& what, std::size_t pixel)
      : Error(ErrorCategory::Format, what), pixel_(pixel) {}
  std::size_t pixel() const noexcept { return pixel_; }

 private:
  std::size_t pixel_;
};

/// Factorization failure or other numerical breakdown.
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorCategory::Numeric, what) {}
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& what) : Error(ErrorCategory::Argument, what) {}
};

}  // namespace bdgp
