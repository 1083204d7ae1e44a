#pragma once

#include <stdexcept>
#include <string>

namespace sepcal {

/// Raised when a covariance cannot be factorized, a weight set collapses to
/// zero, or a sanity bound on a computed quantity is violated.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised for malformed configuration files or out-of-range settings.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when an input file cannot be read or an output file written.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sepcal
