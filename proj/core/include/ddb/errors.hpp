#pragma once

#include <stdexcept>
#include <string>

namespace ddb {

// Raised when a training loop hits a non-recoverable numeric state (NaN loss,
// NaN gradients). Carries enough context to locate the offending stage.
class TrainingError : public std::runtime_error {
public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

// Raised by checkpoint/dataset readers on bad magic, version or truncation.
class FormatError : public std::runtime_error {
public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a config file is structurally valid JSON but semantically bad.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ddb
