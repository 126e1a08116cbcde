#pragma once

#include <stdexcept>
#include <string>

namespace plato {

// Invalid configuration value (non-positive temperature, bad flag, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value where a finite one is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated by the caller.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// Structurally invalid input data (cyclic message trees, bad records).
struct MalformedInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint or vocabulary file could not be read back.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

}  // namespace plato
