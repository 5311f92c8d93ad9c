#pragma once

#include <stdexcept>
#include <string>

namespace ffdconv {

// Error taxonomy maps onto CLI exit codes: config/usage -> 1, I/O -> 2,
// numeric failures (NaN, divergence, failed checks) -> 3.

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ffdconv
