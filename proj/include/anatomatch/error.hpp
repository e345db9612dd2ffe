#pragma once

#include <stdexcept>
#include <string>

namespace anatomatch {

// Error classes map one-to-one onto the status codes of the C API.
enum class ErrorKind {
  Validation,  // precondition / argument violation
  Bounds,      // point outside a volume
  Format,      // malformed magic or header
  Truncated,   // file ends before the declared content
  Length,      // payload size disagrees with header dims
  Io,          // filesystem failure
  Numerical,   // non-finite values, divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Bounds: return "bounds";
    case ErrorKind::Format: return "format";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Length: return "length";
    case ErrorKind::Io: return "io";
    case ErrorKind::Numerical: return "numerical";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::Validation, what);
}

}  // namespace anatomatch
