#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "mft/model.hpp"

namespace mft {

struct MeanFieldTag {};
struct RelativeTag {};
struct JointTag {};

/// Regression parameter of a linear system x' = A x + B u, stored so that
/// value^T = [A, B]. Rows are indexed by the regressor z = [x; u] and
/// columns by the next-state coordinate.
template <typename Tag>
struct Theta {
  MatrixXd value;

  static Theta from_model(const MatrixXd& a, const MatrixXd& b) {
    Theta theta;
    theta.value.resize(a.cols() + b.cols(), a.rows());
    theta.value.topRows(a.cols()) = a.transpose();
    theta.value.bottomRows(b.cols()) = b.transpose();
    return theta;
  }

  Eigen::Index state_dim() const { return value.cols(); }
  MatrixXd A() const { return value.topRows(state_dim()).transpose(); }
  MatrixXd B() const {
    return value.bottomRows(value.rows() - state_dim()).transpose();
  }
};

using ThetaMF = Theta<MeanFieldTag>;
using ThetaRel = Theta<RelativeTag>;
using ThetaJoint = Theta<JointTag>;

/// Stabilizing Riccati solution and the associated optimal gain u = L x.
struct GainPair {
  MatrixXd S;
  MatrixXd L;
  double avg_cost_coeff = 0.0;    // Tr(S)
  double closed_loop_norm = 0.0;  // ||A + B L||_2
  int iterations = 0;
};

struct DareOptions {
  double tol = 1e-10;  // max-abs change between successive iterates
  int max_iter = 100000;
  /// Iterates whose max-abs entry exceeds this are treated as divergent.
  double divergence_bound = 1e14;
};

/// Solves S = A'SA - A'SB (R + B'SB)^{-1} B'SA + Q by value iteration from
/// S = Q. Throws NotStabilizable when the iteration diverges or does not
/// settle within max_iter, and InvalidInput on inconsistent shapes.
GainPair solve_dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                    const MatrixXd& R, const DareOptions& options = {});

/// Non-throwing variant for candidate screening.
std::optional<GainPair> try_solve_dare(const MatrixXd& A, const MatrixXd& B,
                                       const MatrixXd& Q, const MatrixXd& R,
                                       const DareOptions& options = {});

/// Largest singular value by power iteration on M'M.
double induced_norm(const MatrixXd& M, double tol = 1e-10,
                    int max_iter = 10000);

/// Abar = blockdiag(A^m) + [D^1; ...; D^|M|], likewise Bbar with B^m, E^m.
MatrixXd mean_field_A(const SystemSpec& spec);
MatrixXd mean_field_B(const SystemSpec& spec);
ThetaMF assemble_mf(const SystemSpec& spec);
ThetaRel assemble_rel(const SystemSpec& spec, int type);

/// Optimal planning solution: one mean-field problem and one relative
/// problem per type.
struct Plan {
  GainPair mf;
  std::vector<GainPair> rel;

  /// Rows of the mean-field gain that produce type m's mean control.
  MatrixXd mf_gain_rows(int type, int d_u) const {
    return mf.L.middleRows(type * d_u, d_u);
  }
};

Plan plan(const SystemSpec& spec, const DareOptions& options = {});

/// Variance of each coordinate of the relative-state noise, (1 - 1/n) sigma_w2.
double relative_noise_var(const SystemSpec& spec);
/// sigma_w2 / n + sigma_v2 + sigma_v02.
double mean_field_noise_var(const SystemSpec& spec);
/// Exact covariance of the mean-field noise, including the cross-type
/// correlation induced by the global noise.
MatrixXd mean_field_noise_cov(const SystemSpec& spec);

/// sigma_rel^2 Tr(S^m) for one relative problem.
double relative_avg_cost(const SystemSpec& spec, const GainPair& rel);
/// Tr(Wbar Sbar).
double mean_field_avg_cost(const SystemSpec& spec, const GainPair& mf);
/// Optimal long-run average cost J(theta) of the team.
double optimal_avg_cost(const SystemSpec& spec, const Plan& gains);

/// Truncation set for posterior sampling: candidates whose Riccati gain keeps
/// a closed loop within induced norm delta.
struct StabilitySet {
  enum class Kind { kMeanField, kRelative, kJoint };
  /// Which (A, B) pair closes the loop with the candidate's gain L(theta):
  /// the candidate's own matrices, or a fixed nominal pair.
  enum class Reference { kCandidate, kNominal };

  Kind kind = Kind::kRelative;
  int type_index = 0;
  double delta = std::numeric_limits<double>::infinity();
  Reference reference = Reference::kCandidate;
  MatrixXd nominal_A;
  MatrixXd nominal_B;
  /// Optional box ||A - A0|| <= radius, ||B - B0|| <= radius around the
  /// nominal pair.
  std::optional<double> radius;
  MatrixXd Q;
  MatrixXd R;
  DareOptions dare;

  bool unbounded() const {
    return delta == std::numeric_limits<double>::infinity() && !radius;
  }
};

struct Membership {
  bool member = false;
  std::optional<GainPair> gain;  // Riccati solution of the candidate
  double closed_loop_norm = std::numeric_limits<double>::infinity();
};

/// Full membership test, returning the candidate's gain for reuse.
Membership check_stability_set(const MatrixXd& theta, const StabilitySet& set);

bool in_stability_set(const MatrixXd& theta, const StabilitySet& set);

/// The team written as one LQ system over all agents: state is the
/// concatenation of agent states, control likewise.
struct JointSystem {
  MatrixXd A, B, Q, R;
  MatrixXd W;  // per-step noise covariance
};

JointSystem assemble_joint(const SystemSpec& spec);

/// Averaging operator P with P * vec(x) = stacked per-type means.
MatrixXd averaging_operator(const SystemSpec& spec, int dim);

}  // namespace mft
