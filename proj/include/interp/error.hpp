#pragma once

#include <stdexcept>
#include <string>

namespace interp {

// Broad failure classes. The CLI maps these onto distinct exit codes.
enum class ErrorKind {
  kConfig,
  kValidation,
  kAddressing,
  kUnsupportedComponent,
  kIncompatibleSwap,
  kLength,
  kNotFound,
  kProvider,
  kReplayMiss,
  kProtocol,
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define INTERP_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

INTERP_DEFINE_ERROR(ConfigError, kConfig)
INTERP_DEFINE_ERROR(ValidationError, kValidation)
INTERP_DEFINE_ERROR(AddressingError, kAddressing)
INTERP_DEFINE_ERROR(UnsupportedComponentError, kUnsupportedComponent)
INTERP_DEFINE_ERROR(IncompatibleSwapError, kIncompatibleSwap)
INTERP_DEFINE_ERROR(LengthError, kLength)
INTERP_DEFINE_ERROR(NotFoundError, kNotFound)
INTERP_DEFINE_ERROR(ReplayMissError, kReplayMiss)
INTERP_DEFINE_ERROR(ProtocolError, kProtocol)
INTERP_DEFINE_ERROR(IoError, kIo)

#undef INTERP_DEFINE_ERROR

// Provider failures carry the HTTP status (0 when the transport itself failed).
class ProviderError : public Error {
 public:
  ProviderError(int status, const std::string& what)
      : Error(ErrorKind::kProvider, what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace interp
