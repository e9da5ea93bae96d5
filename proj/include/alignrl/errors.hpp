#pragma once

#include <stdexcept>

namespace alignrl {

/// Bad user-supplied configuration: malformed shapes, invalid ranges, unknown names.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A numeric routine failed to meet its convergence or residual contract.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The requested constrained problem has no solution (target outside the feasible hull).
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A policy row collapsed to zero total mass; the message names the state.
struct DegenerateStateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace alignrl
