#pragma once

#include <stdexcept>
#include <string>

namespace cfil {

/// Broad failure categories. The C API and the CLI map these onto status and
/// exit codes, so the set is closed.
enum class ErrorKind {
  Dimension,
  Numeric,
  Contract,
  Capacity,
  Config,
  Input,
  Parse,
  Io,
  Incompatible,
  Undefined,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define CFIL_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(Kind, message) {} \
  };

CFIL_DEFINE_ERROR(DimensionError, ErrorKind::Dimension)
CFIL_DEFINE_ERROR(NumericError, ErrorKind::Numeric)
CFIL_DEFINE_ERROR(ContractError, ErrorKind::Contract)
CFIL_DEFINE_ERROR(CapacityError, ErrorKind::Capacity)
CFIL_DEFINE_ERROR(ConfigError, ErrorKind::Config)
CFIL_DEFINE_ERROR(InputError, ErrorKind::Input)
CFIL_DEFINE_ERROR(ParseError, ErrorKind::Parse)
CFIL_DEFINE_ERROR(IoError, ErrorKind::Io)
CFIL_DEFINE_ERROR(IncompatibleError, ErrorKind::Incompatible)
CFIL_DEFINE_ERROR(UndefinedError, ErrorKind::Undefined)

#undef CFIL_DEFINE_ERROR

}  // namespace cfil
