#pragma once

#include <stdexcept>
#include <string>

namespace dcnet {

// Malformed arguments to an operation (shape mismatch, out-of-range label...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent or missing configuration (bad feature dim, missing checkpoint...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dcnet
