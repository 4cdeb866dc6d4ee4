#pragma once

#include <stdexcept>
#include <string>

namespace hvc {

// Base of every error the library raises. The CLI maps subclasses onto exit
// codes (see tools/hybridvc.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller-supplied values violate a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Serialized bytes do not follow the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// An external encoder/decoder could not be run or exited non-zero.
class CodecProcessError : public Error {
 public:
  CodecProcessError(const std::string& what, std::string stderr_text = {})
      : Error(what), stderr_text_(std::move(stderr_text)) {}
  const std::string& stderr_text() const { return stderr_text_; }

 private:
  std::string stderr_text_;
};

// Operation requested in a state that cannot serve it (e.g. missing cache).
class StateError : public Error {
 public:
  using Error::Error;
};

// Numeric domain problem, e.g. RD curves whose quality ranges do not overlap.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Image too small for the requested multi-scale pyramid.
class ScaleError : public Error {
 public:
  using Error::Error;
};

}  // namespace hvc
