#pragma once

#include <stdexcept>
#include <string>

namespace fetrack {

/// Base class for all toolkit errors. Subclasses map onto CLI exit codes:
/// config/usage problems exit 1, data problems exit 2, numerics exit 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& msg, long line) : Error(format(msg, line)), line_(line) {}
  explicit ParseError(const std::string& msg) : Error(msg), line_(-1) {}
  long line() const { return line_; }

 private:
  static std::string format(const std::string& msg, long line) {
    return msg + " (line " + std::to_string(line) + ")";
  }
  long line_;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class BoxError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericsError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fetrack
