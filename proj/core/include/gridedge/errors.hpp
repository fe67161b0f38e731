#ifndef GRIDEDGE_ERRORS_HPP
#define GRIDEDGE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace gridedge {

// Base class for all library errors. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-supplied configuration or input description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Feeder graph problems: disconnected network, missing reference, bad lines.
class TopologyError : public Error {
 public:
  using Error::Error;
};

// A structurally valid model that cannot be used numerically
// (singular admittance partition, degenerate pattern, ...).
class ModelError : public Error {
 public:
  using Error::Error;
};

// Runtime numerical failures: divergence, SVD failure, zero divisors.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// File system / serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Scenario synthesis could not satisfy its own constraints (event packing).
class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridedge

#endif  // GRIDEDGE_ERRORS_HPP
