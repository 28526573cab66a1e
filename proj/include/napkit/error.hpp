#pragma once

#include <stdexcept>
#include <string>

namespace napkit {

enum class ErrorKind {
  format,
  unsupported_dtype,
  io,
  shape,
  schema,
  empty_group,
  index,
  argument,
  numeric,
  prerequisite,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::format: return "format";
    case ErrorKind::unsupported_dtype: return "unsupported_dtype";
    case ErrorKind::io: return "io";
    case ErrorKind::shape: return "shape";
    case ErrorKind::schema: return "schema";
    case ErrorKind::empty_group: return "empty_group";
    case ErrorKind::index: return "index";
    case ErrorKind::argument: return "argument";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::prerequisite: return "prerequisite";
  }
  return "unknown";
}

// All library failures are reported through this type; `kind` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace napkit
