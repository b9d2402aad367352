#pragma once

#include <stdexcept>
#include <string>

namespace lfsamba {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or image sizes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A function under evaluation produced a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unknown configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem and decoding failures.
class IoError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public IoError {
 public:
  using IoError::IoError;
};

class DecodeError : public IoError {
 public:
  using IoError::IoError;
};

/// Checkpoint container problems: bad magic, version, truncation, missing tensors.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Stable process exit code for an error category: 1 contract/config, 2 I/O.
inline int exit_code_for(const Error& e) {
  if (dynamic_cast<const IoError*>(&e) != nullptr) return 2;
  return 1;
}

}  // namespace lfsamba
