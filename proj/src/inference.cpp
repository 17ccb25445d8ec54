#include "mft/inference.hpp"

#include <cmath>
#include <string>

namespace mft {

ColumnPosterior::ColumnPosterior(MatrixXd prior_means,
                                 const MatrixXd& prior_cov, double noise_var,
                                 StabilitySet truncation)
    : means_(std::move(prior_means)),
      cov_(prior_cov),
      noise_var_(noise_var),
      truncation_(std::move(truncation)) {
  if (cov_.rows() != means_.rows() || cov_.cols() != means_.rows()) {
    throw InvalidInput("ColumnPosterior: covariance does not match means");
  }
  if (noise_var_ < 0.0) {
    throw InvalidInput("ColumnPosterior: noise variance must be nonnegative");
  }
  Eigen::LLT<MatrixXd> llt(cov_);
  if (llt.info() != Eigen::Success) {
    throw InvalidInput("ColumnPosterior: prior covariance must be SPD");
  }
  precision_ = llt.solve(MatrixXd::Identity(cov_.rows(), cov_.cols()));
  precision_ = 0.5 * (precision_ + precision_.transpose()).eval();
  log_det_ = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

void ColumnPosterior::update(const VectorXd& z, const VectorXd& x_next) {
  if (z.size() != dim() || x_next.size() != num_columns()) {
    throw InvalidInput("ColumnPosterior::update: regressor has wrong shape");
  }
  if (z.squaredNorm() == 0.0) return;
  if (noise_var_ <= 0.0) {
    throw InvalidInput(
        "ColumnPosterior::update: nonzero regressor with zero noise variance");
  }
  const VectorXd sz = cov_ * z;
  const double denom = noise_var_ + z.dot(sz);
  const Eigen::RowVectorXd innovation =
      x_next.transpose() - z.transpose() * means_;
  means_.noalias() += sz * (innovation / denom);
  cov_.noalias() -= sz * sz.transpose() / denom;
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
  precision_.noalias() += z * z.transpose() / noise_var_;
  log_det_ += std::log(noise_var_ / denom);
  if (++num_updates_ % kRefactorInterval == 0) refactor();
}

void ColumnPosterior::refactor() {
  precision_ = 0.5 * (precision_ + precision_.transpose()).eval();
  Eigen::LLT<MatrixXd> llt(precision_);
  if (llt.info() != Eigen::Success) return;
  cov_ = llt.solve(MatrixXd::Identity(dim(), dim()));
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
  log_det_ = -2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

SampleResult sample_truncated(const ColumnPosterior& post, RandomSource& rng,
                              int max_attempts, const MatrixXd* previous) {
  const StabilitySet& set = post.truncation();
  const Eigen::LLT<MatrixXd> llt(post.cov());
  const MatrixXd chol = llt.matrixL();
  SampleResult out;
  VectorXd xi(post.dim());
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    MatrixXd theta = post.means();
    for (Eigen::Index col = 0; col < theta.cols(); ++col) {
      rng.gaussian(xi);
      theta.col(col) += chol * xi;
    }
    Membership membership = check_stability_set(theta, set);
    if (membership.member) {
      out.theta = std::move(theta);
      out.gain = std::move(membership.gain);
      out.attempts = attempt;
      return out;
    }
  }

  out.attempts = max_attempts;
  out.fallback = true;
  Membership mean = check_stability_set(post.means(), set);
  if (mean.member) {
    out.theta = post.means();
    out.gain = std::move(mean.gain);
    return out;
  }
  if (previous != nullptr) {
    out.theta = *previous;
    out.gain = check_stability_set(*previous, set).gain;
    return out;
  }
  if (set.nominal_A.size() > 0) {
    out.theta = ThetaRel::from_model(set.nominal_A, set.nominal_B).value;
    out.gain = check_stability_set(out.theta, set).gain;
    return out;
  }
  out.theta = post.means();
  out.gain = std::move(mean.gain);
  return out;
}

SelectionScheme SelectionScheme::parse(std::string_view text) {
  SelectionScheme s;
  if (text == "max_quad" || text == "maxquadform") {
    s.kind = Kind::kMaxQuadForm;
  } else if (text == "random" || text == "random_uniform") {
    s.kind = Kind::kRandomUniform;
  } else if (text == "all" || text == "all_agents") {
    s.kind = Kind::kAllAgents;
  } else if (text == "fixed") {
    s.kind = Kind::kFixed;
  } else if (text.starts_with("fixed:")) {
    s.kind = Kind::kFixed;
    const std::string index(text.substr(6));
    std::size_t used = 0;
    try {
      s.fixed_index = std::stoi(index, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != index.size() || index.empty() || s.fixed_index < 0) {
      throw InvalidInput("bad fixed agent index in scheme '" +
                         std::string(text) + "'");
    }
  } else {
    throw InvalidInput("unknown selection scheme '" + std::string(text) + "'");
  }
  return s;
}

std::string SelectionScheme::name() const {
  switch (kind) {
    case Kind::kMaxQuadForm:
      return "max_quad";
    case Kind::kFixed:
      return "fixed:" + std::to_string(fixed_index);
    case Kind::kRandomUniform:
      return "random";
    case Kind::kAllAgents:
      return "all";
  }
  return "max_quad";
}

Selection select_agent(const SelectionScheme& scheme, const MatrixXd& relatives,
                       const MatrixXd& sigma, RandomSource& rng) {
  const Eigen::Index n = relatives.cols();
  if (n == 0) throw InvalidInput("select_agent: no agents");
  Selection out;
  switch (scheme.kind) {
    case SelectionScheme::Kind::kMaxQuadForm: {
      const Eigen::RowVectorXd forms =
          (sigma * relatives).cwiseProduct(relatives).colwise().sum();
      double best = forms[0];
      for (Eigen::Index i = 1; i < n; ++i) {
        if (forms[i] > best) {
          best = forms[i];
          out.index = static_cast<int>(i);
        }
      }
      break;
    }
    case SelectionScheme::Kind::kFixed:
      if (scheme.fixed_index >= n) {
        throw InvalidInput("select_agent: fixed index out of range");
      }
      out.index = scheme.fixed_index;
      break;
    case SelectionScheme::Kind::kRandomUniform:
      out.index = n == 1 ? 0 : static_cast<int>(rng.uniform_index(n));
      break;
    case SelectionScheme::Kind::kAllAgents:
      out.all = true;
      break;
  }
  return out;
}

}  // namespace mft
