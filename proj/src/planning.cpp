#include "mft/planning.hpp"

#include <cmath>
#include <string>

namespace mft {
namespace {

double max_abs(const MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

void check_dare_shapes(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                       const MatrixXd& R) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != B.cols() || R.cols() != B.cols()) {
    throw InvalidInput("solve_dare: inconsistent matrix dimensions");
  }
}

// (R + B'SB)^{-1} B'SA, returned together with B'SA.
MatrixXd riccati_gain_factor(const MatrixXd& A, const MatrixXd& B,
                             const MatrixXd& R, const MatrixXd& S,
                             MatrixXd* BtSA) {
  const MatrixXd BtS = B.transpose() * S;
  *BtSA = BtS * A;
  const MatrixXd G = R + BtS * B;
  return G.ldlt().solve(*BtSA);
}

}  // namespace

GainPair solve_dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                    const MatrixXd& R, const DareOptions& options) {
  check_dare_shapes(A, B, Q, R);
  MatrixXd S = Q;
  MatrixXd BtSA;
  MatrixXd next;
  const double eps = std::numeric_limits<double>::epsilon();
  int it = 0;
  bool converged = false;
  while (it < options.max_iter) {
    ++it;
    const MatrixXd K = riccati_gain_factor(A, B, R, S, &BtSA);
    next = Q + A.transpose() * S * A - BtSA.transpose() * K;
    next = 0.5 * (next + next.transpose()).eval();
    const double size = max_abs(next);
    if (!next.allFinite() || size > options.divergence_bound) {
      throw NotStabilizable("solve_dare: value iteration diverged after " +
                            std::to_string(it) + " iterations");
    }
    const double change = max_abs(next - S);
    S.swap(next);
    if (change < options.tol || change <= 64 * eps * size) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw NotStabilizable("solve_dare: no convergence within " +
                          std::to_string(options.max_iter) + " iterations");
  }

  GainPair out;
  out.L = -riccati_gain_factor(A, B, R, S, &BtSA);
  out.S = std::move(S);
  out.avg_cost_coeff = out.S.trace();
  out.closed_loop_norm = induced_norm(A + B * out.L);
  out.iterations = it;
  return out;
}

std::optional<GainPair> try_solve_dare(const MatrixXd& A, const MatrixXd& B,
                                       const MatrixXd& Q, const MatrixXd& R,
                                       const DareOptions& options) {
  try {
    return solve_dare(A, B, Q, R, options);
  } catch (const NotStabilizable&) {
    return std::nullopt;
  }
}

double induced_norm(const MatrixXd& M, double tol, int max_iter) {
  if (M.size() == 0) return 0.0;
  if (M.size() == 1) return std::abs(M(0, 0));
  const MatrixXd gram = M.transpose() * M;
  const Eigen::Index n = gram.rows();

  auto power = [&](VectorXd v) {
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < max_iter; ++it) {
      VectorXd w = gram * v;
      const double next = v.dot(w);
      const double norm = w.norm();
      if (norm == 0.0) return 0.0;
      v = w / norm;
      if (std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) {
        return next;
      }
      lambda = next;
    }
    return lambda;
  };

  VectorXd start(n);
  for (Eigen::Index i = 0; i < n; ++i) start[i] = 1.0 + 1.0 / (i + 2.0);
  double lambda = power(start);
  // A start vector orthogonal to the dominant subspace gives a
  // spuriously small answer; retry from the coordinate axes.
  if (lambda <= 0.0 && max_abs(gram) > 0.0) {
    for (Eigen::Index i = 0; i < n; ++i) {
      lambda = std::max(lambda, power(VectorXd::Unit(n, i)));
    }
  }
  return std::sqrt(std::max(lambda, 0.0));
}

MatrixXd mean_field_A(const SystemSpec& spec) {
  const int dx = spec.d_x;
  MatrixXd a = MatrixXd::Zero(spec.num_types * dx, spec.num_types * dx);
  for (int m = 0; m < spec.num_types; ++m) {
    a.block(m * dx, m * dx, dx, dx) = spec.per_type[m].A;
    a.middleRows(m * dx, dx) += spec.per_type[m].D;
  }
  return a;
}

MatrixXd mean_field_B(const SystemSpec& spec) {
  const int dx = spec.d_x;
  const int du = spec.d_u;
  MatrixXd b = MatrixXd::Zero(spec.num_types * dx, spec.num_types * du);
  for (int m = 0; m < spec.num_types; ++m) {
    b.block(m * dx, m * du, dx, du) = spec.per_type[m].B;
    b.middleRows(m * dx, dx) += spec.per_type[m].E;
  }
  return b;
}

ThetaMF assemble_mf(const SystemSpec& spec) {
  return ThetaMF::from_model(mean_field_A(spec), mean_field_B(spec));
}

ThetaRel assemble_rel(const SystemSpec& spec, int type) {
  if (type < 0 || type >= spec.num_types) {
    throw InvalidInput("assemble_rel: type index out of range");
  }
  return ThetaRel::from_model(spec.per_type[type].A, spec.per_type[type].B);
}

Plan plan(const SystemSpec& spec, const DareOptions& options) {
  Plan out;
  out.rel.reserve(spec.num_types);
  for (const TypeParams& p : spec.per_type) {
    out.rel.push_back(solve_dare(p.A, p.B, p.Q, p.R, options));
  }
  out.mf = solve_dare(mean_field_A(spec), mean_field_B(spec),
                      spec.mean_field_Q(), spec.mean_field_R(), options);
  return out;
}

double relative_noise_var(const SystemSpec& spec) {
  return (1.0 - 1.0 / spec.agents_per_type) * spec.sigma_w2;
}

double mean_field_noise_var(const SystemSpec& spec) {
  return spec.sigma_w2 / spec.agents_per_type + spec.sigma_v2 + spec.sigma_v02;
}

MatrixXd mean_field_noise_cov(const SystemSpec& spec) {
  const int dim = spec.num_types * spec.d_x;
  MatrixXd w = (spec.sigma_w2 / spec.agents_per_type + spec.sigma_v2) *
               MatrixXd::Identity(dim, dim);
  for (int a = 0; a < spec.num_types; ++a) {
    for (int b = 0; b < spec.num_types; ++b) {
      w.block(a * spec.d_x, b * spec.d_x, spec.d_x, spec.d_x).diagonal()
          .array() += spec.sigma_v02;
    }
  }
  return w;
}

double relative_avg_cost(const SystemSpec& spec, const GainPair& rel) {
  return relative_noise_var(spec) * rel.S.trace();
}

double mean_field_avg_cost(const SystemSpec& spec, const GainPair& mf) {
  return (mean_field_noise_cov(spec) * mf.S).trace();
}

double optimal_avg_cost(const SystemSpec& spec, const Plan& gains) {
  double j = mean_field_avg_cost(spec, gains.mf);
  for (const GainPair& rel : gains.rel) j += relative_avg_cost(spec, rel);
  return j;
}

Membership check_stability_set(const MatrixXd& theta, const StabilitySet& set) {
  const Eigen::Index dx = set.Q.rows();
  const Eigen::Index du = set.R.rows();
  if (theta.rows() != dx + du || theta.cols() != dx) {
    throw InvalidInput("check_stability_set: candidate has wrong shape");
  }
  Membership out;
  if (!theta.allFinite()) return out;
  const MatrixXd a = theta.topRows(dx).transpose();
  const MatrixXd b = theta.bottomRows(du).transpose();

  if (set.radius) {
    if (induced_norm(a - set.nominal_A) > *set.radius ||
        induced_norm(b - set.nominal_B) > *set.radius) {
      return out;
    }
  }
  out.gain = try_solve_dare(a, b, set.Q, set.R, set.dare);
  if (set.delta == std::numeric_limits<double>::infinity()) {
    out.member = true;
    if (out.gain) out.closed_loop_norm = out.gain->closed_loop_norm;
    return out;
  }
  if (!out.gain) return out;

  if (set.reference == StabilitySet::Reference::kCandidate) {
    out.closed_loop_norm = out.gain->closed_loop_norm;
  } else {
    out.closed_loop_norm =
        induced_norm(set.nominal_A + set.nominal_B * out.gain->L);
  }
  out.member = out.closed_loop_norm <= set.delta;
  return out;
}

bool in_stability_set(const MatrixXd& theta, const StabilitySet& set) {
  return check_stability_set(theta, set).member;
}

MatrixXd averaging_operator(const SystemSpec& spec, int dim) {
  const int n = spec.agents_per_type;
  MatrixXd p = MatrixXd::Zero(spec.num_types * dim, spec.num_agents() * dim);
  for (int i = 0; i < spec.num_agents(); ++i) {
    p.block(spec.type_of(i) * dim, i * dim, dim, dim).diagonal().setConstant(
        1.0 / n);
  }
  return p;
}

JointSystem assemble_joint(const SystemSpec& spec) {
  const int N = spec.num_agents();
  const int n = spec.agents_per_type;
  const int dx = spec.d_x;
  const int du = spec.d_u;
  const MatrixXd px = averaging_operator(spec, dx);
  const MatrixXd pu = averaging_operator(spec, du);

  JointSystem js;
  js.A = MatrixXd::Zero(N * dx, N * dx);
  js.B = MatrixXd::Zero(N * dx, N * du);
  js.Q = px.transpose() * spec.Q_bar * px;
  js.R = pu.transpose() * spec.R_bar * pu;
  MatrixXd d_stack(N * dx, spec.num_types * dx);
  MatrixXd e_stack(N * dx, spec.num_types * du);
  for (int i = 0; i < N; ++i) {
    const TypeParams& p = spec.per_type[spec.type_of(i)];
    js.A.block(i * dx, i * dx, dx, dx) = p.A;
    js.B.block(i * dx, i * du, dx, du) = p.B;
    js.Q.block(i * dx, i * dx, dx, dx) += p.Q / n;
    js.R.block(i * du, i * du, du, du) += p.R / n;
    d_stack.middleRows(i * dx, dx) = p.D;
    e_stack.middleRows(i * dx, dx) = p.E;
  }
  js.A += d_stack * px;
  js.B += e_stack * pu;

  js.W = spec.sigma_w2 * MatrixXd::Identity(N * dx, N * dx);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      double c = spec.sigma_v02;
      if (spec.type_of(i) == spec.type_of(j)) c += spec.sigma_v2;
      js.W.block(i * dx, j * dx, dx, dx).diagonal().array() += c;
    }
  }
  return js;
}

}  // namespace mft
