#include "mft/model.hpp"

#include <string>

namespace mft {
namespace {

MatrixXd block_diag_plus(const SystemSpec& spec, const MatrixXd& coupling,
                         bool state_weights) {
  MatrixXd out = coupling;
  const int d = state_weights ? spec.d_x : spec.d_u;
  for (int m = 0; m < spec.num_types; ++m) {
    const MatrixXd& w =
        state_weights ? spec.per_type[m].Q : spec.per_type[m].R;
    out.block(m * d, m * d, d, d) += w;
  }
  return out;
}

void require_shape(const MatrixXd& mat, Eigen::Index rows, Eigen::Index cols,
                   const std::string& what) {
  if (mat.rows() != rows || mat.cols() != cols) {
    throw InvalidInput(what + ": expected " + std::to_string(rows) + "x" +
                       std::to_string(cols) + ", got " +
                       std::to_string(mat.rows()) + "x" +
                       std::to_string(mat.cols()));
  }
}

void require_spd(const MatrixXd& mat, const std::string& what) {
  const double scale = 1.0 + mat.cwiseAbs().maxCoeff();
  if ((mat - mat.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw InvalidInput(what + " must be symmetric");
  }
  Eigen::LLT<MatrixXd> llt(mat);
  if (llt.info() != Eigen::Success) {
    throw InvalidInput(what + " must be positive definite");
  }
}

}  // namespace

MatrixXd SystemSpec::mean_field_Q() const {
  return block_diag_plus(*this, Q_bar, true);
}

MatrixXd SystemSpec::mean_field_R() const {
  return block_diag_plus(*this, R_bar, false);
}

void SystemSpec::validate() const {
  if (num_types < 1 || agents_per_type < 1 || d_x < 1 || d_u < 1) {
    throw InvalidInput("num_types, agents_per_type, d_x, d_u must be positive");
  }
  if (static_cast<int>(per_type.size()) != num_types) {
    throw InvalidInput("per_type must hold one entry per type");
  }
  if (sigma_w2 < 0 || sigma_v2 < 0 || sigma_v02 < 0) {
    throw InvalidInput("noise variances must be nonnegative");
  }
  const int mx = num_types * d_x;
  const int mu = num_types * d_u;
  for (int m = 0; m < num_types; ++m) {
    const TypeParams& p = per_type[m];
    const std::string tag = "type " + std::to_string(m) + " ";
    require_shape(p.A, d_x, d_x, tag + "A");
    require_shape(p.B, d_x, d_u, tag + "B");
    require_shape(p.D, d_x, mx, tag + "D");
    require_shape(p.E, d_x, mu, tag + "E");
    require_shape(p.Q, d_x, d_x, tag + "Q");
    require_shape(p.R, d_u, d_u, tag + "R");
    require_spd(p.Q, tag + "Q");
    require_spd(p.R, tag + "R");
  }
  require_shape(Q_bar, mx, mx, "Q_bar");
  require_shape(R_bar, mu, mu, "R_bar");
  require_spd(mean_field_Q(), "diag(Q^m) + Q_bar");
  require_spd(mean_field_R(), "diag(R^m) + R_bar");
}

SystemSpec scalar_system(int agents, double a, double b, double d, double e,
                         double q, double q_bar, double r, double r_bar,
                         double sigma_w2, double sigma_v2, double sigma_v02) {
  auto scalar = [](double v) { return MatrixXd::Constant(1, 1, v); };
  SystemSpec spec;
  spec.num_types = 1;
  spec.agents_per_type = agents;
  spec.d_x = 1;
  spec.d_u = 1;
  spec.per_type.push_back(TypeParams{scalar(a), scalar(b), scalar(d),
                                     scalar(e), scalar(q), scalar(r)});
  spec.Q_bar = scalar(q_bar);
  spec.R_bar = scalar(r_bar);
  spec.sigma_w2 = sigma_w2;
  spec.sigma_v2 = sigma_v2;
  spec.sigma_v02 = sigma_v02;
  return spec;
}

VectorXd type_means(const MatrixXd& cols, const SystemSpec& spec) {
  const int n = spec.agents_per_type;
  const Eigen::Index d = cols.rows();
  if (cols.cols() != spec.num_agents()) {
    throw InvalidInput("expected one column per agent");
  }
  VectorXd means(spec.num_types * d);
  for (int m = 0; m < spec.num_types; ++m) {
    means.segment(m * d, d) = cols.middleCols(m * n, n).rowwise().mean();
  }
  return means;
}

DecomposedState decompose(const MatrixXd& cols, const SystemSpec& spec) {
  const int n = spec.agents_per_type;
  const Eigen::Index d = cols.rows();
  DecomposedState out;
  out.mf = type_means(cols, spec);
  out.rel = cols;
  for (int m = 0; m < spec.num_types; ++m) {
    out.rel.middleCols(m * n, n).colwise() -= out.mf.segment(m * d, d);
  }
  return out;
}

DecomposedState decompose(const GlobalState& state, const SystemSpec& spec) {
  if (state.x.rows() != spec.d_x) {
    throw InvalidInput("state dimension does not match d_x");
  }
  return decompose(state.x, spec);
}

MatrixXd step_mean(const MatrixXd& x, const MatrixXd& controls,
                   const SystemSpec& spec) {
  if (x.rows() != spec.d_x || x.cols() != spec.num_agents()) {
    throw InvalidInput("state has wrong shape");
  }
  if (controls.rows() != spec.d_u || controls.cols() != spec.num_agents()) {
    throw InvalidInput("controls have wrong shape");
  }
  const int n = spec.agents_per_type;
  const VectorXd x_mf = type_means(x, spec);
  const VectorXd u_mf = type_means(controls, spec);
  MatrixXd next(spec.d_x, spec.num_agents());
  for (int m = 0; m < spec.num_types; ++m) {
    const TypeParams& p = spec.per_type[m];
    const VectorXd coupling = p.D * x_mf + p.E * u_mf;
    auto block = next.middleCols(m * n, n);
    block.noalias() = p.A * x.middleCols(m * n, n);
    block.noalias() += p.B * controls.middleCols(m * n, n);
    block.colwise() += coupling;
  }
  return next;
}

GlobalState step(const GlobalState& state, const MatrixXd& controls,
                 const SystemSpec& spec, RandomSource& rng) {
  GlobalState next{step_mean(state.x, controls, spec), state.t + 1};
  const int n = spec.agents_per_type;
  const int dx = spec.d_x;

  VectorXd v0(dx);
  rng.gaussian(v0);
  v0 *= std::sqrt(spec.sigma_v02);
  next.x.colwise() += v0;

  VectorXd vm(dx);
  for (int m = 0; m < spec.num_types; ++m) {
    rng.gaussian(vm);
    next.x.middleCols(m * n, n).colwise() += std::sqrt(spec.sigma_v2) * vm;
  }

  const double sw = std::sqrt(spec.sigma_w2);
  VectorXd w(dx);
  for (int i = 0; i < spec.num_agents(); ++i) {
    rng.gaussian(w);
    next.x.col(i) += sw * w;
  }
  return next;
}

double per_step_cost(const MatrixXd& x, const MatrixXd& controls,
                     const SystemSpec& spec) {
  const int n = spec.agents_per_type;
  const VectorXd x_mf = type_means(x, spec);
  const VectorXd u_mf = type_means(controls, spec);
  double cost = x_mf.dot(spec.Q_bar * x_mf) + u_mf.dot(spec.R_bar * u_mf);
  for (int m = 0; m < spec.num_types; ++m) {
    const TypeParams& p = spec.per_type[m];
    const auto xs = x.middleCols(m * n, n);
    const auto us = controls.middleCols(m * n, n);
    const double local = (p.Q * xs).cwiseProduct(xs).sum() +
                         (p.R * us).cwiseProduct(us).sum();
    cost += local / n;
  }
  return cost;
}

SplitCost split_cost(const DecomposedState& xs, const DecomposedState& us,
                     const SystemSpec& spec) {
  const int n = spec.agents_per_type;
  SplitCost out;
  out.mean_field = xs.mf.dot(spec.mean_field_Q() * xs.mf) +
                   us.mf.dot(spec.mean_field_R() * us.mf);
  for (int m = 0; m < spec.num_types; ++m) {
    const TypeParams& p = spec.per_type[m];
    const auto xr = xs.rel.middleCols(m * n, n);
    const auto ur = us.rel.middleCols(m * n, n);
    out.relative += ((p.Q * xr).cwiseProduct(xr).sum() +
                     (p.R * ur).cwiseProduct(ur).sum()) /
                    n;
  }
  return out;
}

}  // namespace mft
