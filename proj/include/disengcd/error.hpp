#pragma once

#include <stdexcept>
#include <string>

namespace disengcd {

/// Error categories. The CLI maps them onto process exit codes.
enum class ErrorKind {
  shape,       // operand shapes disagree
  numeric,     // NaN / Inf produced or consumed
  contract,    // caller broke a precondition
  validation,  // input data failed validation
  config,      // bad configuration or usage
  parse,       // malformed file
};

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

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::shape: return "shape error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::config: return "config error";
    case ErrorKind::parse: return "parse error";
  }
  return "error";
}

}  // namespace disengcd
