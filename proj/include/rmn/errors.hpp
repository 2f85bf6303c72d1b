#pragma once

#include <stdexcept>
#include <string>

namespace rmn {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible shapes, bad axes, out-of-range indices or lengths.
class ShapeError : public Error {
  using Error::Error;
};

// Invalid argument values or call-sequence misuse (non-positive temperature,
// double backward, ...).
class ValueError : public Error {
  using Error::Error;
};

// Non-finite values detected while the opt-in numerics guard is enabled.
class NumericError : public Error {
  using Error::Error;
};

// File format and filesystem failures.
class IoError : public Error {
  using Error::Error;
};

// Corpus, vocabulary, and label-alignment problems.
class DataError : public Error {
  using Error::Error;
};

}  // namespace rmn
