#pragma once

#include <stdexcept>
#include <string>

namespace otseg {

enum class ErrorKind {
  Format,      // malformed container / npy / json content
  Validation,  // invariant or precondition violated
  Io,          // unreadable or unwritable path
  Dimension,   // mismatched shapes between operands
  EmptySet,    // nothing left to score
  Size,        // instance too large / sample larger than population
  Input,       // non-finite numeric input
  Overflow,    // dense-kernel Sinkhorn lost precision
  Undefined,   // statistic undefined for the given data
  Run,         // whole run failed
};

const char* to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; `kind()` drives CLI exit codes.
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

}  // namespace otseg
