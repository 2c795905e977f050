#pragma once

#include <stdexcept>
#include <string>

namespace mdgcn {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or truncated on-disk data: bad magic, short payload, trailing bytes.
class FormatError : public Error {
public:
  using Error::Error;
};

// Structurally readable input whose contents are invalid: non-finite values,
// dimension mismatches, label gaps.
class DataError : public Error {
public:
  using Error::Error;
};

// Parameter or matrix outside the documented domain of an operation.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

// Non-finite intermediate results: diverged training, bad loss input.
class NumericError : public Error {
public:
  using Error::Error;
};

}  // namespace mdgcn
