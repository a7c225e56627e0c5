// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gfss {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An input lies outside the mathematical domain of an op (e.g. log of a non-positive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller-side precondition was violated.
class ContractError : public Error {
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

class DataError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite or exploding objective.
class NumericalAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace gfss
