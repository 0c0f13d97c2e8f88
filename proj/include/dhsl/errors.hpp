#pragma once

#include <stdexcept>
#include <string>

namespace dhsl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or vector dimensions that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An operation was called out of order, e.g. backward before forward.
class StateError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Malformed or insufficient input data (filenames, images, manifests).
class DataError : public Error {
 public:
  using Error::Error;
};

// Checkpoint files with the wrong magic, version or tensor table.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string layer)
      : Error(what), layer_(std::move(layer)) {}

  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

}  // namespace dhsl
