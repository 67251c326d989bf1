#pragma once

#include <stdexcept>
#include <string>

namespace cfu {

// Base of every domain failure. The CLI maps these to exit code 1 and the
// HTTP service maps the subclasses to status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument or value that violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Degenerate geometry (e.g. too few or collinear points for an ellipse fit).
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Document does not match the interchange schema. `path` is a JSON pointer
// to the offending field.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& message)
      : Error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

// Operation is well-formed but conflicts with current state.
class Conflict : public Error {
 public:
  using Error::Error;
};

class MissingEllipse : public Conflict {
 public:
  using Conflict::Conflict;
};

}  // namespace cfu
