#pragma once

#include <stdexcept>
#include <string>

namespace tokattr {

// Bad user input: malformed files, invalid parameters, precondition failures.
// The CLI maps these to exit code 1; any other exception maps to 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structurally valid input that the engine cannot process (e.g. a trace with
// no document tokens handed to attribution).
class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kEngineVersion = "0.3.0";

}  // namespace tokattr
