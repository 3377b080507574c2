#pragma once

#include <stdexcept>
#include <string>

namespace cloudseg {

enum class ErrorKind {
  Argument,
  Format,
  Corruption,
  Version,
  Io,
  Consistency,
  Budget,
  Numeric,
  Contract,
};

// Single exception type for the library; the kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Argument: return "argument error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Corruption: return "corruption error";
    case ErrorKind::Version: return "version error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Consistency: return "consistency error";
    case ErrorKind::Budget: return "budget error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Contract: return "contract violation";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace cloudseg
