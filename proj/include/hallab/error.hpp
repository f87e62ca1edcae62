#pragma once

#include <stdexcept>
#include <string>

namespace hallab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments: dimension mismatch, out-of-range parameters, empty inputs.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Numerical failure: non-convergence, singular Gram, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace hallab
