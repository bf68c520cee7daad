#pragma once

#include <stdexcept>
#include <string>

namespace kp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration: missing template variables, malformed config files,
// unregistered providers. CLI exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Inconsistent data: broken referential integrity, digest mismatches,
// missing grade cells. CLI exit code 3.
struct IntegrityError : Error {
  using Error::Error;
};

// Caller violated a documented precondition.
struct ArgumentError : Error {
  using Error::Error;
};

// Malformed structured text (tagged entity spans, grader tags).
struct ParseError : Error {
  using Error::Error;
};

// Backend could not be reached after bounded retries. CLI exit code 4.
struct TransportError : Error {
  TransportError(const std::string& what, int attempts_made)
      : Error(what), attempts(attempts_made) {}
  int attempts = 0;
};

// Backend answered with a non-retryable failure. CLI exit code 4.
struct BackendError : Error {
  using Error::Error;
};

}  // namespace kp
