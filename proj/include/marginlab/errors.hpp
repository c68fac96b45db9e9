#pragma once

#include <stdexcept>
#include <string>

namespace marginlab {

enum class ErrorKind {
  invalid_argument,
  degenerate_vector,
  degenerate_geometry,
  degenerate_setup,
  config,
  data,
  format,
  unsupported_version,
  diverged,
  fit,
  numerical,
  undefined_correlation,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::degenerate_vector: return "degenerate-vector";
    case ErrorKind::degenerate_geometry: return "degenerate-geometry";
    case ErrorKind::degenerate_setup: return "degenerate-setup";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::format: return "format";
    case ErrorKind::unsupported_version: return "unsupported-version";
    case ErrorKind::diverged: return "diverged";
    case ErrorKind::fit: return "fit";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::undefined_correlation: return "undefined-correlation";
  }
  return "unknown";
}

// Every library failure is reported through this one type; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace marginlab
