#pragma once

#include <stdexcept>
#include <string>

namespace atlas {

// User-facing failures (bad input, bad flags, missing files) map to CLI exit
// code 1; NumericError maps to exit code 2.

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace atlas
