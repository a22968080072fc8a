#pragma once

#include <stdexcept>
#include <string>

namespace flonet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or record.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input parsed but violates a structural or contract invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Operation is not supported by this backend (e.g. training an oracle).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace flonet
