#include "mft/tsde.hpp"

#include <cmath>
#include <numbers>

namespace mft {

ActorState::ActorState(ColumnPosterior post, int attempts,
                       Eigen::Index gain_rows, Eigen::Index gain_cols)
    : posterior(std::move(post)),
      log_det_at_start(posterior.log_det()),
      gain(MatrixXd::Zero(gain_rows, gain_cols)),
      max_attempts(attempts) {}

bool episode_should_end(const ActorState& actor, long t) {
  return t - actor.episode_start > actor.prev_episode_len ||
         actor.posterior.log_det() <
             actor.log_det_at_start - std::numbers::ln2;
}

bool ActorState::begin_step(long t, RandomSource& rng) {
  if (!episode_should_end(*this, t)) return false;
  if (posterior.log_det() < log_det_at_start - std::numbers::ln2) {
    ++det_halvings;
  }
  prev_episode_len = t - episode_start;
  ++episode_index;
  episode_start = t;
  log_det_at_start = posterior.log_det();
  const bool fallback = resample(rng);
  if (record_history) {
    history.push_back(EpisodeRecord{t, sampled_theta, gain_pair, fallback});
  }
  return true;
}

bool ActorState::resample(RandomSource& rng) {
  SampleResult sample;
  if (forced_theta) {
    sample.theta = *forced_theta;
    sample.gain = check_stability_set(*forced_theta, posterior.truncation()).gain;
  } else {
    sample = sample_truncated(posterior, rng, max_attempts,
                              last_accepted_ ? &*last_accepted_ : nullptr);
  }
  if (sample.fallback) ++fallbacks;
  if (!sample.gain) {
    // No Riccati solution for the draw: hold the previous parameter.
    ++fallbacks;
    return true;
  }
  if (!sample.fallback) last_accepted_ = sample.theta;
  sampled_theta = std::move(sample.theta);
  gain = sample.gain->L;
  gain_pair = std::move(sample.gain);
  return sample.fallback;
}

MatrixXd expand_prior_mean(const MatrixXd& mean, Eigen::Index p,
                           Eigen::Index columns) {
  if (mean.size() == 1) return MatrixXd::Constant(p, columns, mean(0, 0));
  if (mean.rows() == p && mean.cols() == columns) return mean;
  if (mean.size() == p && (mean.rows() == 1 || mean.cols() == 1)) {
    const VectorXd v = mean.reshaped();
    return v.replicate(1, columns);
  }
  throw InvalidInput("prior mean must be a scalar, a length-" +
                     std::to_string(p) + " vector or a " + std::to_string(p) +
                     "x" + std::to_string(columns) + " matrix");
}

MatrixXd expand_prior_cov(const MatrixXd& cov, Eigen::Index p) {
  if (cov.size() == 1) return cov(0, 0) * MatrixXd::Identity(p, p);
  if (cov.rows() == p && cov.cols() == p) return cov;
  throw InvalidInput("prior covariance must be a scalar or a " +
                     std::to_string(p) + "x" + std::to_string(p) + " matrix");
}

StabilitySet mean_field_set(const SystemSpec& spec, const LearnerConfig& cfg) {
  StabilitySet set;
  set.kind = StabilitySet::Kind::kMeanField;
  set.delta = cfg.delta;
  set.reference = cfg.reference;
  set.nominal_A = mean_field_A(spec);
  set.nominal_B = mean_field_B(spec);
  set.Q = spec.mean_field_Q();
  set.R = spec.mean_field_R();
  return set;
}

StabilitySet relative_set(const SystemSpec& spec, int type,
                          const LearnerConfig& cfg) {
  StabilitySet set;
  set.kind = StabilitySet::Kind::kRelative;
  set.type_index = type;
  set.delta = cfg.delta;
  set.reference = cfg.reference;
  set.nominal_A = spec.per_type[type].A;
  set.nominal_B = spec.per_type[type].B;
  set.Q = spec.per_type[type].Q;
  set.R = spec.per_type[type].R;
  return set;
}

StabilitySet joint_set(const SystemSpec& spec, const LearnerConfig& cfg) {
  const JointSystem js = assemble_joint(spec);
  StabilitySet set;
  set.kind = StabilitySet::Kind::kJoint;
  set.delta = cfg.naive_delta;
  set.reference = cfg.reference;
  set.nominal_A = js.A;
  set.nominal_B = js.B;
  set.Q = js.Q;
  set.R = js.R;
  return set;
}

PolicyKind PolicyKind::parse(std::string_view text) {
  PolicyKind p;
  if (text == "tsde_mf") {
    p.kind = Kind::kTsdeMf;
  } else if (text == "naive_tsde") {
    p.kind = Kind::kNaiveTsde;
  } else if (text == "optimal") {
    p.kind = Kind::kOptimalOracle;
  } else if (text == "fixed_gain") {
    p.kind = Kind::kFixedGain;
  } else {
    throw InvalidInput("unknown policy '" + std::string(text) + "'");
  }
  return p;
}

std::string PolicyKind::name() const {
  switch (kind) {
    case Kind::kTsdeMf:
      return "tsde_mf";
    case Kind::kNaiveTsde:
      return "naive_tsde";
    case Kind::kOptimalOracle:
      return "optimal";
    case Kind::kFixedGain:
      return "fixed_gain";
  }
  return "tsde_mf";
}

namespace {

ActorState make_mf_actor(const SystemSpec& spec, const LearnerConfig& cfg) {
  const int p = spec.num_types * (spec.d_x + spec.d_u);
  const int cols = spec.num_types * spec.d_x;
  ColumnPosterior post(expand_prior_mean(cfg.mf_mean, p, cols),
                       expand_prior_cov(cfg.mf_cov, p),
                       mean_field_noise_var(spec), mean_field_set(spec, cfg));
  return ActorState(std::move(post), cfg.max_attempts,
                    spec.num_types * spec.d_u, cols);
}

ActorState make_rel_actor(const SystemSpec& spec, int type,
                          const LearnerConfig& cfg) {
  const int p = spec.d_x + spec.d_u;
  ColumnPosterior post(expand_prior_mean(cfg.rel_mean, p, spec.d_x),
                       expand_prior_cov(cfg.rel_cov, p),
                       relative_noise_var(spec), relative_set(spec, type, cfg));
  return ActorState(std::move(post), cfg.max_attempts, spec.d_u, spec.d_x);
}

// Per-agent relative prior mean placed on the block diagonal of the joint
// parameter.
MatrixXd joint_prior_mean(const SystemSpec& spec, const LearnerConfig& cfg) {
  const int dx = spec.d_x;
  const int du = spec.d_u;
  const int N = spec.num_agents();
  const MatrixXd local = expand_prior_mean(cfg.rel_mean, dx + du, dx);
  const MatrixXd a = local.topRows(dx).transpose();
  const MatrixXd b = local.bottomRows(du).transpose();
  MatrixXd ja = MatrixXd::Zero(N * dx, N * dx);
  MatrixXd jb = MatrixXd::Zero(N * dx, N * du);
  for (int i = 0; i < N; ++i) {
    ja.block(i * dx, i * dx, dx, dx) = a;
    jb.block(i * dx, i * du, dx, du) = b;
  }
  return ThetaJoint::from_model(ja, jb).value;
}

}  // namespace

TsdeMfController::TsdeMfController(const SystemSpec& spec,
                                   const LearnerConfig& cfg,
                                   SelectionScheme scheme, std::uint64_t seed,
                                   bool record_history)
    : spec_(spec),
      scheme_(scheme),
      mf_(make_mf_actor(spec, cfg)),
      sampling_(seed, 1),
      selecting_(seed, 2),
      prev_rel_z_(spec.num_types),
      selection_(spec.num_types) {
  mf_.record_history = record_history;
  rel_.reserve(spec.num_types);
  for (int m = 0; m < spec.num_types; ++m) {
    rel_.push_back(make_rel_actor(spec, m, cfg));
    rel_.back().record_history = record_history;
  }
  if (scheme.kind == SelectionScheme::Kind::kFixed &&
      scheme.fixed_index >= spec.agents_per_type) {
    throw InvalidInput("fixed selection index must be below agents_per_type");
  }
}

std::vector<int> TsdeMfController::episodes_rel() const {
  std::vector<int> out;
  for (const ActorState& a : rel_) out.push_back(a.episode_index);
  return out;
}

int TsdeMfController::fallbacks() const {
  int total = mf_.fallbacks;
  for (const ActorState& a : rel_) total += a.fallbacks;
  return total;
}

MatrixXd TsdeMfController::act(const GlobalState& state) {
  const int n = spec_.agents_per_type;
  const int dx = spec_.d_x;
  const int du = spec_.d_u;
  const DecomposedState dec = decompose(state, spec_);

  if (prev_mf_z_) mf_.posterior.update(*prev_mf_z_, dec.mf);
  mf_.begin_step(state.t, sampling_);
  const VectorXd u_mf = mf_.gain * dec.mf;

  MatrixXd controls(du, spec_.num_agents());
  for (int m = 0; m < spec_.num_types; ++m) {
    ActorState& actor = rel_[m];
    const auto rel_x = dec.rel.middleCols(m * n, n);
    if (prev_rel_z_[m].size() > 0) {
      const Selection& sel = selection_[m];
      if (sel.all) {
        for (int i = 0; i < n; ++i) {
          actor.posterior.update(prev_rel_z_[m].col(i), rel_x.col(i));
        }
      } else {
        actor.posterior.update(prev_rel_z_[m].col(sel.index),
                               rel_x.col(sel.index));
      }
    }
    actor.begin_step(state.t, sampling_);

    MatrixXd z(dx + du, n);
    z.topRows(dx) = rel_x;
    z.bottomRows(du).noalias() = actor.gain * rel_x;
    auto block = controls.middleCols(m * n, n);
    block = z.bottomRows(du);
    block.colwise() += u_mf.segment(m * du, du);

    selection_[m] = select_agent(scheme_, z, actor.posterior.cov(), selecting_);
    prev_rel_z_[m] = std::move(z);
  }

  VectorXd z_mf(dec.mf.size() + u_mf.size());
  z_mf << dec.mf, u_mf;
  prev_mf_z_ = std::move(z_mf);
  return controls;
}

NaiveTsdeController::NaiveTsdeController(const SystemSpec& spec,
                                         const LearnerConfig& cfg,
                                         std::uint64_t seed)
    : spec_(spec),
      joint_(assemble_joint(spec)),
      actor_([&] {
        const int N = spec.num_agents();
        const int p = N * (spec.d_x + spec.d_u);
        const double noise = spec.sigma_w2 + spec.sigma_v2 + spec.sigma_v02;
        ColumnPosterior post(joint_prior_mean(spec, cfg),
                             cfg.naive_cov * MatrixXd::Identity(p, p), noise,
                             joint_set(spec, cfg));
        return ActorState(std::move(post), cfg.max_attempts, N * spec.d_u,
                          N * spec.d_x);
      }()),
      sampling_(seed, 1) {}

MatrixXd NaiveTsdeController::act(const GlobalState& state) {
  const VectorXd x = state.x.reshaped();
  if (prev_z_) actor_.posterior.update(*prev_z_, x);
  actor_.begin_step(state.t, sampling_);
  const VectorXd u = actor_.gain * x;
  VectorXd z(x.size() + u.size());
  z << x, u;
  prev_z_ = std::move(z);
  return u.reshaped(spec_.d_u, spec_.num_agents());
}

OptimalController::OptimalController(const SystemSpec& spec)
    : spec_(spec), plan_(plan(spec)) {}

MatrixXd OptimalController::act(const GlobalState& state) {
  const int n = spec_.agents_per_type;
  const DecomposedState dec = decompose(state, spec_);
  const VectorXd u_mf = plan_.mf.L * dec.mf;
  MatrixXd controls(spec_.d_u, spec_.num_agents());
  for (int m = 0; m < spec_.num_types; ++m) {
    auto block = controls.middleCols(m * n, n);
    block.noalias() = plan_.rel[m].L * dec.rel.middleCols(m * n, n);
    block.colwise() += u_mf.segment(m * spec_.d_u, spec_.d_u);
  }
  return controls;
}

FixedGainController::FixedGainController(const SystemSpec& spec, MatrixXd gain)
    : spec_(spec), gain_(std::move(gain)) {
  if (gain_.rows() != spec.d_u || gain_.cols() != spec.d_x) {
    throw InvalidInput("fixed gain must be d_u x d_x");
  }
}

MatrixXd FixedGainController::act(const GlobalState& state) {
  return gain_ * state.x;
}

std::unique_ptr<Controller> make_controller(const PolicyKind& policy,
                                            const SystemSpec& spec,
                                            const LearnerConfig& cfg,
                                            std::uint64_t seed,
                                            bool record_history) {
  switch (policy.kind) {
    case PolicyKind::Kind::kTsdeMf:
      return std::make_unique<TsdeMfController>(spec, cfg, policy.scheme, seed,
                                                record_history);
    case PolicyKind::Kind::kNaiveTsde:
      return std::make_unique<NaiveTsdeController>(spec, cfg, seed);
    case PolicyKind::Kind::kOptimalOracle:
      return std::make_unique<OptimalController>(spec);
    case PolicyKind::Kind::kFixedGain: {
      MatrixXd gain = policy.fixed_gain;
      if (gain.size() == 1 && (spec.d_u != 1 || spec.d_x != 1)) {
        gain = MatrixXd::Constant(spec.d_u, spec.d_x, gain(0, 0));
      }
      if (gain.size() == 0) gain = MatrixXd::Zero(spec.d_u, spec.d_x);
      return std::make_unique<FixedGainController>(spec, gain);
    }
  }
  throw InvalidInput("unknown policy kind");
}

RunResult run_policy(const PolicyKind& policy, const SystemSpec& spec,
                     const LearnerConfig& cfg, const RunOptions& options) {
  const bool history =
      options.verbose && policy.kind == PolicyKind::Kind::kTsdeMf;
  auto controller = make_controller(policy, spec, cfg, options.seed, history);
  return run_controller(*controller, spec, options);
}

RunResult run_controller(Controller& controller, const SystemSpec& spec,
                         const RunOptions& options) {
  if (options.horizon < 1) throw InvalidInput("horizon must be at least 1");
  if (options.record_stride < 1) {
    throw InvalidInput("record_stride must be at least 1");
  }
  const Plan truth = plan(spec);
  double j_rel = 0.0;
  for (const GainPair& rel : truth.rel) j_rel += relative_avg_cost(spec, rel);
  const double j_mf = mean_field_avg_cost(spec, truth.mf);
  const double j_total = options.optimal_cost.value_or(j_rel + j_mf);

  auto* mf_controller = dynamic_cast<TsdeMfController*>(&controller);
  auto* naive_controller = dynamic_cast<NaiveTsdeController*>(&controller);

  RandomSource noise(options.seed, 0);
  GlobalState state{MatrixXd::Zero(spec.d_x, spec.num_agents()), 1};
  if (options.init_state_var > 0.0) {
    VectorXd draw(spec.d_x);
    for (int i = 0; i < spec.num_agents(); ++i) {
      noise.gaussian(draw);
      state.x.col(i) = std::sqrt(options.init_state_var) * draw;
    }
  }

  RunResult result;
  const bool trace = options.verbose && mf_controller != nullptr;
  if (trace) {
    result.trace.emplace();
    result.trace->states.reserve(options.horizon + 1);
    result.trace->controls.reserve(options.horizon);
  }

  RunRecord rec;
  rec.seed = options.seed;
  rec.max_state_norm = state.x.colwise().norm().maxCoeff();
  for (long t = 1; t <= options.horizon; ++t) {
    if (!rec.diverged) {
      const MatrixXd controls = controller.act(state);
      const DecomposedState xs = decompose(state, spec);
      const DecomposedState us = decompose(controls, spec);
      const SplitCost cost = split_cost(xs, us, spec);
      if (trace) {
        result.trace->states.push_back(xs.rel);
        result.trace->controls.push_back(us.rel);
      }
      rec.cum_cost += cost.total();
      rec.cum_rel_regret += cost.relative - j_rel;
      rec.cum_mf_regret += cost.mean_field - j_mf;
      state = step(state, controls, spec, noise);
      const double norm = state.x.colwise().norm().maxCoeff();
      if (!std::isfinite(norm) || norm > options.divergence_bound ||
          !std::isfinite(rec.cum_cost)) {
        rec.diverged = true;
        rec.max_state_norm = std::isfinite(norm)
                                 ? std::max(rec.max_state_norm, norm)
                                 : std::numeric_limits<double>::infinity();
      } else {
        rec.max_state_norm = std::max(rec.max_state_norm, norm);
      }
      rec.t = t;
      rec.cum_regret = rec.cum_cost - static_cast<double>(t) * j_total;
      rec.episodes_mf = controller.episodes_mf();
      rec.episodes_rel = controller.episodes_rel();
      rec.fallbacks = controller.fallbacks();
    }
    if (t % options.record_stride == 0 || t == options.horizon) {
      RunRecord logged = rec;
      logged.t = t;
      result.records.push_back(std::move(logged));
    }
  }
  result.diverged = rec.diverged;
  if (trace && !rec.diverged) {
    result.trace->states.push_back(decompose(state, spec).rel);
  }

  if (mf_controller != nullptr) {
    const ActorState& mf = mf_controller->mf_actor();
    result.actors.push_back({mf.episode_index, mf.det_halvings});
    for (int m = 0; m < spec.num_types; ++m) {
      const ActorState& rel = mf_controller->rel_actor(m);
      result.actors.push_back({rel.episode_index, rel.det_halvings});
      if (trace) result.trace->episodes.push_back(rel.history);
    }
  } else if (naive_controller != nullptr) {
    const ActorState& a = naive_controller->actor();
    result.actors.push_back({a.episode_index, a.det_halvings});
  }
  return result;
}

}  // namespace mft
