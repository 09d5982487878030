#pragma once

#include <stdexcept>
#include <string>

namespace nmt {

// Process exit codes shared by the CLI and the error hierarchy below.
enum class ExitCode : int {
  kOk = 0,
  kInputError = 1,
  kConfigError = 2,
  kNumericalError = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string &what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Malformed or missing data: bad files, mismatched line counts, bad ids.
class InputError : public Error {
 public:
  explicit InputError(const std::string &what)
      : Error(ExitCode::kInputError, what) {}
};

// Inconsistent settings: vocabulary too small, hash mismatches, bad flags.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string &what)
      : Error(ExitCode::kConfigError, what) {}
};

// Non-finite values during training or inference.
class NumericalError : public Error {
 public:
  NumericalError(const std::string &what, std::string tensor)
      : Error(ExitCode::kNumericalError, what), tensor_(std::move(tensor)) {}
  const std::string &tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

}  // namespace nmt
