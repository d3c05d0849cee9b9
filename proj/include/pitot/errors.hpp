#pragma once

#include <stdexcept>
#include <string>

namespace pitot {

/// Input data failed a structural or range check.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A file could not be parsed; message carries the offending line when known.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IndexError : std::out_of_range {
  explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

/// Finite-sample conformal guarantee unattainable (calibration set too small).
struct InfeasibleError : std::runtime_error {
  explicit InfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Requested calibration pool was never calibrated and no fallback is configured.
struct UnknownPoolError : std::runtime_error {
  explicit UnknownPoolError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pitot
