#pragma once

#include <stdexcept>
#include <string>

namespace faultformer {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes: ConfigError/ParseError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or lengths.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Messages carry the offending row when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace faultformer
