#pragma once

#include <stdexcept>
#include <string>

namespace xscene {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf reached a place where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data (scene bundles, checkpoints, rasters).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment or component configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace xscene
