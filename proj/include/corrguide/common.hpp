// SPDX-License-Identifier: Apache-2.0
//
// Shared scalar aliases, error hierarchy, logging, and the deterministic
// PRNG used everywhere randomness is needed.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace corrguide {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Additive logit used to suppress attention at masked positions. Finite on
// purpose: exp(kNegInf / sqrt(d_a)) underflows to exactly zero in double
// precision, so suppressed probabilities vanish while softmax and its
// derivatives stay well-defined.
inline constexpr double kNegInf = -1e9;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Level comes from the CORRGUIDE_LOG environment variable (error|info|debug),
// parsed once. Messages go to stderr.
LogLevel log_level();
void log(LogLevel level, const std::string& message);

// splitmix64. Deterministic across platforms; the only randomness source in
// the library.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();

  // Uniform in [0, 1).
  double next_unit();

  // Standard normal via Box-Muller.
  double next_normal();

  // Uniform integer in [lo, hi], inclusive.
  int next_int(int lo, int hi);

  // Independent stream derived from the current state and a tag; does not
  // advance this generator.
  SplitMix64 fork(std::uint64_t tag) const;

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Monotonic wall clock in milliseconds.
double now_ms();

}  // namespace corrguide
