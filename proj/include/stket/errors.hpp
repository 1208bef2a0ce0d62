#pragma once

#include <stdexcept>
#include <string>

namespace stket {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Violated precondition of an operation (caller bug, not bad data).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace stket
