#pragma once

#include <stdexcept>
#include <string>

namespace tactile {

// Base for every error raised by the workbench. `kind()` carries the stable
// error name used in logs, CLI exit messages and wire-protocol error payloads.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define TACTILE_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  };

TACTILE_DEFINE_ERROR(JointLimit)
TACTILE_DEFINE_ERROR(EmptyOverlap)
TACTILE_DEFINE_ERROR(TooShort)
TACTILE_DEFINE_ERROR(ShapeMismatch)
TACTILE_DEFINE_ERROR(NaNLoss)
TACTILE_DEFINE_ERROR(Singular)
TACTILE_DEFINE_ERROR(ZeroTargetVariance)
TACTILE_DEFINE_ERROR(InvalidArgument)
TACTILE_DEFINE_ERROR(SessionClosed)
TACTILE_DEFINE_ERROR(EpisodeDone)
TACTILE_DEFINE_ERROR(ConfigInvalid)
TACTILE_DEFINE_ERROR(EnvFailure)
TACTILE_DEFINE_ERROR(HashMismatch)
TACTILE_DEFINE_ERROR(ConcurrentWriter)
TACTILE_DEFINE_ERROR(ProtocolError)

#undef TACTILE_DEFINE_ERROR

}  // namespace tactile
