#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "mft/planning.hpp"

namespace mft {

/// One observed transition x_next = theta' z + noise.
struct Regressor {
  VectorXd z;
  VectorXd x_next;
};

/// Gaussian belief over a p x L parameter matrix whose columns are
/// independent with individual means and one shared covariance. The
/// covariance, its inverse and its log-determinant are maintained together
/// through rank-1 updates.
class ColumnPosterior {
 public:
  /// `prior_means` is p x L; `prior_cov` is p x p and positive definite.
  ColumnPosterior(MatrixXd prior_means, const MatrixXd& prior_cov,
                  double noise_var, StabilitySet truncation);

  /// Conjugate update with one transition. A zero regressor leaves the
  /// belief unchanged.
  void update(const VectorXd& z, const VectorXd& x_next);
  void update(const Regressor& reg) { update(reg.z, reg.x_next); }

  const MatrixXd& means() const { return means_; }
  const MatrixXd& cov() const { return cov_; }
  const MatrixXd& precision() const { return precision_; }
  double log_det() const { return log_det_; }
  double noise_var() const { return noise_var_; }
  const StabilitySet& truncation() const { return truncation_; }
  Eigen::Index dim() const { return means_.rows(); }
  Eigen::Index num_columns() const { return means_.cols(); }
  long num_updates() const { return num_updates_; }

  /// Interval between full refreshes of cov and log_det from the precision.
  static constexpr long kRefactorInterval = 1000;

 private:
  void refactor();

  MatrixXd means_;
  MatrixXd cov_;
  MatrixXd precision_;
  double log_det_ = 0.0;
  double noise_var_ = 0.0;
  StabilitySet truncation_;
  long num_updates_ = 0;
};

struct SampleResult {
  MatrixXd theta;
  std::optional<GainPair> gain;
  int attempts = 0;
  /// True when every draw was rejected and a fallback parameter was used.
  bool fallback = false;
};

/// Rejection sampling from the posterior restricted to its truncation set.
/// After `max_attempts` rejections, falls back to the posterior mean if it
/// lies in the set, else to `previous` (the last accepted sample), else to
/// the set's nominal model.
SampleResult sample_truncated(const ColumnPosterior& post, RandomSource& rng,
                              int max_attempts = 1000,
                              const MatrixXd* previous = nullptr);

struct SelectionScheme {
  enum class Kind { kMaxQuadForm, kFixed, kRandomUniform, kAllAgents };
  Kind kind = Kind::kMaxQuadForm;
  int fixed_index = 0;

  /// Accepts "max_quad", "fixed", "fixed:<i>", "random", "all".
  static SelectionScheme parse(std::string_view text);
  std::string name() const;
  bool operator==(const SelectionScheme&) const = default;
};

struct Selection {
  bool all = false;
  int index = 0;
};

/// Chooses which agent's relative transition feeds the type's posterior.
/// `relatives` holds one regressor per column. Ties in the quadratic form go
/// to the lowest index.
Selection select_agent(const SelectionScheme& scheme, const MatrixXd& relatives,
                       const MatrixXd& sigma, RandomSource& rng);

}  // namespace mft
