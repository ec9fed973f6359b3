#pragma once

#include <stdexcept>
#include <string>

namespace wv {

/// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kIo = 3,
  kNumeric = 4,
};

/// Base of all errors raised by this project. Carries the exit code the CLI
/// reports when the error escapes a command.
class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid configuration, incompatible checkpoint/stage, or bad CLI values.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

/// Filesystem and file-format failures.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::kIo, what) {}
};

/// Non-finite values, failed numeric preconditions inside kernels.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

/// Violated preconditions of a library call (wrong shapes, out-of-range ids).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

}  // namespace wv
