// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ehrenfest {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs violate a documented precondition (shape, sign, feasibility).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A configuration document or CLI invocation is malformed.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A quantity is mathematically undefined for the given inputs.
class Undefined : public Error {
 public:
  using Error::Error;
};

/// An internal consistency check failed (e.g. non-monotone free energy).
class CheckFailure : public Error {
 public:
  using Error::Error;
};

/// Training diverged.
class Divergence : public Error {
 public:
  using Error::Error;
};

}  // namespace ehrenfest
