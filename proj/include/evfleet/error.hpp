#pragma once

#include <stdexcept>
#include <string>

namespace evfleet {

// Bad inputs: parameters, configs, out-of-range arguments. Maps to CLI exit 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A legal input that the numerics or the simulation could not handle. Maps to CLI exit 2.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(what);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace detail
}  // namespace evfleet
