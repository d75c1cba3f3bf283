#include "otseg/error.hpp"

namespace otseg {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Format: return "format error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::EmptySet: return "empty-set error";
    case ErrorKind::Size: return "size error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Overflow: return "overflow error";
    case ErrorKind::Undefined: return "undefined-correlation error";
    case ErrorKind::Run: return "run error";
  }
  return "error";
}

}  // namespace otseg
