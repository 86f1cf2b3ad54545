#pragma once

#include <stdexcept>
#include <string>

namespace clst {

/// Malformed or truncated file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File carries a recognised magic with an unsupported version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Invalid hyperparameter or config file.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace clst
