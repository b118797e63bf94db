#pragma once

#include <stdexcept>
#include <string>

namespace ibp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform (matmul inner dims, elementwise mismatch, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A scalar argument is outside its documented range (epsilon < 0, kappa > 1, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Dataset or container files failed to parse.
class DataError : public Error {
 public:
  using Error::Error;
};

// A loss or activation became non-finite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ibp
