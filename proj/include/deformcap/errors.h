#pragma once

#include <stdexcept>
#include <string>

namespace deformcap {

/// Malformed or invariant-violating input (files, configs, arguments).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure inside a numerical stage that cannot produce a usable result.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

} // namespace deformcap
