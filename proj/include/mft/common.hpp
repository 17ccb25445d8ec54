#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mft {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Raised when inputs have inconsistent dimensions or violate a documented
/// precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by the Riccati solver when value iteration does not converge, which
/// signals that (A, B) is not stabilizable.
class NotStabilizable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seeded source of Gaussian and uniform draws. Owned by exactly one
/// trajectory or actor; never shared across threads.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

  /// Independent stream `stream` derived from `seed`.
  RandomSource(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  double gaussian() { return normal_(engine_); }

  /// Fills `out` with standard normal draws in index order.
  void gaussian(Eigen::Ref<VectorXd> out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal_(engine_);
  }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace mft
