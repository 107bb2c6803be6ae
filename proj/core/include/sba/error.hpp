#pragma once

#include <stdexcept>
#include <string>

namespace sba {

// Every library failure derives from sba::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Raised when a training loss stops being finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace sba
