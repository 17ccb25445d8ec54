#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "mft/tsde.hpp"

namespace mft {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to reproduce one Monte-Carlo experiment.
struct ExperimentConfig {
  SystemSpec system;
  LearnerConfig prior;
  PolicyKind policy;
  long horizon = 5000;
  int seeds = 1;
  std::uint64_t base_seed = 0;
  long record_stride = 10;
  double init_state_var = 0.0;
  /// Draw the true system from the (truncated) prior for every seed instead
  /// of using `system` as the truth.
  bool truth_from_prior = false;
  std::string output;

  /// Throws ConfigError.
  void validate() const;
};

/// INI-style text with [system], [prior] and [run] sections. Matrices are
/// written row-major with spaces between entries and ';' between rows.
/// Per-type blocks default to the unsuffixed key (A, B, ...) and may be
/// overridden for type m with a suffixed key (A_1, B_1, ...).
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
void write_config(std::ostream& out, const ExperimentConfig& cfg);

MatrixXd parse_matrix(const std::string& text);
std::string format_matrix(const MatrixXd& m);

/// Homogeneous scalar team used for the regret curves: A=1, B=0.3, D=0.5,
/// E=0.2, Q=Q_bar=1, R=1, R_bar=0.5, local noise 1, common noise 1 split
/// evenly between the type and global channels, prior means [1, 1], identity
/// prior covariances, delta = 0.99.
ExperimentConfig scalar_regret_config(int agents);

/// Same dynamics without common noise, zero prior means and delta = 2.3;
/// used to compare against the joint-system learner.
ExperimentConfig scalar_comparison_config(int agents);

}  // namespace mft
