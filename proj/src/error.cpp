#include "cfil/error.hpp"

namespace cfil {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Contract: return "contract error";
    case ErrorKind::Capacity: return "capacity error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Incompatible: return "incompatibility error";
    case ErrorKind::Undefined: return "undefined";
  }
  return "error";
}

}  // namespace cfil
