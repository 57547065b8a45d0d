#pragma once

#include <stdexcept>
#include <string>

namespace volxai {

/// Precondition or argument violation (bad sizes, out-of-grid centers, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values, singular fits, diverging training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration could not be parsed or is inconsistent with upstream artifacts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file produced by an earlier pipeline stage is absent.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::string& path)
      : std::runtime_error("missing upstream artifact: " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace volxai
