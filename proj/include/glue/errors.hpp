#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace glue {

/// Process exit codes used by the CLI.
enum class ExitCode : int {
  ok = 0,
  config = 2,
  data = 3,
  numeric = 4,
};

/// Base of every error the library throws. Carries the CLI exit code and an
/// optional pipeline phase tag that is prefixed to the message.
class Error : public std::exception {
 public:
  Error(std::string message, ExitCode code) : message_(std::move(message)), code_(code) {
    render();
  }

  const char* what() const noexcept override { return rendered_.c_str(); }
  ExitCode exit_code() const noexcept { return code_; }
  const std::string& phase() const noexcept { return phase_; }
  const std::string& message() const noexcept { return message_; }

  void tag_phase(std::string phase) {
    if (phase_.empty()) {
      phase_ = std::move(phase);
      render();
    }
  }

 private:
  void render() { rendered_ = phase_.empty() ? message_ : "[" + phase_ + "] " + message_; }

  std::string message_;
  std::string phase_;
  std::string rendered_;
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(std::string message) : Error(std::move(message), ExitCode::config) {}
};

class DataError : public Error {
 public:
  explicit DataError(std::string message) : Error(std::move(message), ExitCode::data) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(std::string message) : Error(std::move(message), ExitCode::numeric) {}
};

// Data-error refinements.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class LabelError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class CorruptionError : public DataError {
 public:
  using DataError::DataError;
};

class VersionError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace glue
