#pragma once

#include <stdexcept>
#include <string>

namespace betacount {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on the arguments was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed its accuracy or convergence guard.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace betacount
