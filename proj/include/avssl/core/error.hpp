// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace avssl {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or input geometry does not match what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied configuration or argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system or container format problem.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or degenerate numerics (zero-norm vectors, NaN loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A window or range lies outside the data it refers to.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// A clip is too short for the requested sampling strategy.
class InfeasibleClip : public Error {
 public:
  InfeasibleClip(std::string strategy, double min_length_s, double length_s);

  const std::string& strategy() const { return strategy_; }
  double min_length_s() const { return min_length_s_; }

 private:
  std::string strategy_;
  double min_length_s_;
};

}  // namespace avssl
