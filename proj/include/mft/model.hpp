#pragma once

#include <vector>

#include "mft/common.hpp"

namespace mft {

/// Dynamics and cost blocks of one agent type. D and E couple the agent to the
/// stacked mean-field of all types.
struct TypeParams {
  MatrixXd A;  // d_x x d_x
  MatrixXd B;  // d_x x d_u
  MatrixXd D;  // d_x x (|M| d_x)
  MatrixXd E;  // d_x x (|M| d_u)
  MatrixXd Q;  // d_x x d_x
  MatrixXd R;  // d_u x d_u
};

/// Ground-truth mean-field team. Every type has the same dimensions and the
/// same population; noise covariances are scaled identities and the global
/// noise enters every agent through the identity.
struct SystemSpec {
  int num_types = 1;
  int agents_per_type = 1;
  int d_x = 1;
  int d_u = 1;
  std::vector<TypeParams> per_type;
  MatrixXd Q_bar;  // (|M| d_x) x (|M| d_x)
  MatrixXd R_bar;  // (|M| d_u) x (|M| d_u)
  double sigma_w2 = 0.0;   // local noise
  double sigma_v2 = 0.0;   // common within a type
  double sigma_v02 = 0.0;  // common to all agents

  int num_agents() const { return num_types * agents_per_type; }
  int type_of(int agent) const { return agent / agents_per_type; }

  /// diag(Q^m) + Q_bar and diag(R^m) + R_bar.
  MatrixXd mean_field_Q() const;
  MatrixXd mean_field_R() const;

  /// Checks dimensions, symmetry and positive definiteness of the cost
  /// weights. Throws InvalidInput.
  void validate() const;
};

/// Scalar homogeneous team with the same (A, B, D, E, Q, Q_bar, R, R_bar)
/// across the single type.
SystemSpec scalar_system(int agents, double a, double b, double d, double e,
                         double q, double q_bar, double r, double r_bar,
                         double sigma_w2, double sigma_v2, double sigma_v02);

/// Global state: column `i` holds agent i's state. Agents are ordered
/// type-major, so agent i has type i / n.
struct GlobalState {
  MatrixXd x;  // d_x x (n |M|)
  long t = 1;
};

struct DecomposedState {
  VectorXd mf;   // stacked per-type means, |M| d_x
  MatrixXd rel;  // d_x x (n |M|), x^i - mean of its type
};

/// Per-type column means of `cols` (dim x N), stacked into a vector.
VectorXd type_means(const MatrixXd& cols, const SystemSpec& spec);

/// Splits per-agent vectors into per-type means and deviations from them.
/// Works for states (d_x rows) and controls (d_u rows) alike.
DecomposedState decompose(const MatrixXd& cols, const SystemSpec& spec);
DecomposedState decompose(const GlobalState& state, const SystemSpec& spec);

/// Advances every agent one step. Noise is drawn from `rng` in this order:
/// the global v0 (d_x draws), then v^m for each type in index order, then w^i
/// for each agent in index order. Draws happen even when a variance is zero.
GlobalState step(const GlobalState& state, const MatrixXd& controls,
                 const SystemSpec& spec, RandomSource& rng);

/// Noise-free part of `step`.
MatrixXd step_mean(const MatrixXd& x, const MatrixXd& controls,
                   const SystemSpec& spec);

/// Per-step team cost evaluated directly from agent states and controls.
double per_step_cost(const MatrixXd& x, const MatrixXd& controls,
                     const SystemSpec& spec);

/// The same cost evaluated through the mean-field / relative split.
struct SplitCost {
  double mean_field = 0.0;
  double relative = 0.0;  // sum over types of (1/n) sum_i c^m(rel_i)
  double total() const { return mean_field + relative; }
};
SplitCost split_cost(const DecomposedState& xs, const DecomposedState& us,
                     const SystemSpec& spec);

}  // namespace mft
