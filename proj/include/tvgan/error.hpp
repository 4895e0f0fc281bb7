#pragma once

#include <stdexcept>
#include <string>

namespace tvgan {

// Base of every error raised by the library. The CLI maps InputError
// subclasses to exit status 1 and everything else to exit status 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller-side problems: bad arguments, unreadable files, malformed inputs.
class InputError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public InputError {
 public:
  using InputError::InputError;
};

class LoadError : public InputError {
 public:
  using InputError::InputError;
};

class PairIntegrityError : public InputError {
 public:
  using InputError::InputError;
};

class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

class LookupError : public InputError {
 public:
  using InputError::InputError;
};

class DecodeError : public InputError {
 public:
  using InputError::InputError;
};

// Non-finite loss, gradient or parameter encountered during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace tvgan
