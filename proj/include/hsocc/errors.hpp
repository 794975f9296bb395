#pragma once

#include <stdexcept>
#include <string>

namespace hsocc {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Grid dimensions incompatible with the requested pyramid / UNet depth.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data: wrong length, bad float, unknown raw label.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Tensor or array shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Inputs that violate a numeric precondition (negative probabilities,
// unnormalized distributions, empty masks, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace hsocc
