#pragma once

#include <stdexcept>
#include <string>

namespace uw3d {

// Base for every error raised by the library. Subclasses group failures by
// the layer that detected them so callers can map them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something outside the documented domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Ray/plane/root-finding geometry outside the model (TIR, no crossing, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or unexpected wire traffic.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Device unreachable, timed out, or refused a command.
class DeviceError : public Error {
 public:
  using Error::Error;
};

}  // namespace uw3d
