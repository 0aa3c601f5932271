#pragma once

#include <stdexcept>
#include <string>

namespace pdnforge {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Random sampling could not produce a usable board outline or mask.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// Not enough free (cell, side) slots to place the requested ports.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// A linear system was singular or produced non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes or array sizes do not match what a layer expects.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A file on disk could not be parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw PreconditionError(what);
}

}  // namespace pdnforge
