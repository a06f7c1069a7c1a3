#pragma once

#include <stdexcept>
#include <string>

namespace euda {

// Error classes partition failures the way the command-line tool reports them:
// configuration and contract problems map to exit 1, data problems to exit 2,
// numerical divergence to exit 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition on an API call (bad shapes, out-of-range argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Base for everything that is wrong with input data or files on disk.
class DataFileError : public Error {
 public:
  using Error::Error;
};

// Bad magic, unsupported version, truncated payload.
class FormatError : public DataFileError {
 public:
  using DataFileError::DataFileError;
};

// Non-finite feature value.
class DataError : public DataFileError {
 public:
  using DataFileError::DataFileError;
};

// Label outside the declared class range.
class ConsistencyError : public DataFileError {
 public:
  using DataFileError::DataFileError;
};

// Checkpoint shape does not fit the requested pipeline.
class ShapeError : public DataFileError {
 public:
  using DataFileError::DataFileError;
};

class IoError : public DataFileError {
 public:
  using DataFileError::DataFileError;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace euda
