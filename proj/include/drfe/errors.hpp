#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace drfe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// p places mass where q has none.
class AbsoluteContinuityViolation : public Error {
 public:
  using Error::Error;
};

/// A normalizer underflowed to zero or overflowed; rescale the loss.
class DegenerateNormalizer : public Error {
 public:
  using Error::Error;
};

/// A likelihood ratio left the box [delta0, delta1].
class BoundsViolation : public Error {
 public:
  using Error::Error;
};

/// The constraint set admits no normalized ratio.
class InfeasibleSet : public Error {
 public:
  using Error::Error;
};

class OracleNoConvergence : public Error {
 public:
  using Error::Error;
};

/// An accepted Frank-Wolfe step increased the objective. Never expected.
class NonDescentAnomaly : public Error {
 public:
  using Error::Error;
};

class UnsupportedSize : public Error {
 public:
  using Error::Error;
};

class UncoveredState : public Error {
 public:
  using Error::Error;
};

/// Malformed input: shapes, non-finite values, invalid distributions.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A failure inside the inner solve of one (state, action) cell.
class CellSolveError : public Error {
 public:
  CellSolveError(std::size_t state, std::size_t action, const std::string& what)
      : Error("cell (state " + std::to_string(state) + ", action " + std::to_string(action) +
              "): " + what),
        state_(state),
        action_(action) {}
  std::size_t state() const { return state_; }
  std::size_t action() const { return action_; }

 private:
  std::size_t state_;
  std::size_t action_;
};

}  // namespace drfe
