#pragma once

#include <stdexcept>
#include <string>

namespace mpcrl {

/// Dimension or kind mismatch between values that must agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite loss, gradient or prediction where a finite value is required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration, detected before any run starts.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Geometry with no defined observation (e.g. coincident centers).
class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace mpcrl
