#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mft/inference.hpp"

namespace mft {

/// Parameter drawn at the start of one episode, with the gain that was used.
struct EpisodeRecord {
  long start = 0;
  MatrixXd theta;
  std::optional<GainPair> gain;
  bool fallback = false;
};

/// One Thompson-sampling learner with dynamic episodes: a posterior, the
/// current sampled parameter, and the bookkeeping for both stopping rules.
class ActorState {
 public:
  ActorState(ColumnPosterior posterior, int max_attempts, Eigen::Index gain_rows,
             Eigen::Index gain_cols);

  ColumnPosterior posterior;
  int episode_index = 0;      // episodes started so far
  long episode_start = 0;     // start of the current episode
  long prev_episode_len = 0;  // length of the previous episode
  double log_det_at_start = 0.0;
  MatrixXd sampled_theta;
  MatrixXd gain;
  std::optional<GainPair> gain_pair;
  int det_halvings = 0;
  int fallbacks = 0;
  int max_attempts = 1000;

  /// When set, every episode uses this parameter instead of a posterior draw.
  std::optional<MatrixXd> forced_theta;
  bool record_history = false;
  std::vector<EpisodeRecord> history;

  /// Starts a new episode (and resamples) if either stopping rule fires.
  /// Returns true when a new episode began.
  bool begin_step(long t, RandomSource& rng);

 private:
  bool resample(RandomSource& rng);

  std::optional<MatrixXd> last_accepted_;
};

/// Length rule (t - t_k > T_{k-1}) or determinant-halving rule.
bool episode_should_end(const ActorState& actor, long t);

/// Prior and truncation settings shared by the learners.
struct LearnerConfig {
  /// Column means: a p-vector applied to every column, or a full p x L
  /// matrix, or a scalar filling every entry.
  MatrixXd mf_mean = MatrixXd::Ones(1, 1);
  MatrixXd mf_cov = MatrixXd::Identity(1, 1);  // scalar c means c * I
  MatrixXd rel_mean = MatrixXd::Ones(1, 1);
  MatrixXd rel_cov = MatrixXd::Identity(1, 1);
  double delta = 0.99;
  StabilitySet::Reference reference = StabilitySet::Reference::kNominal;
  /// Naive joint learner: prior covariance scale and truncation bound.
  double naive_cov = 1.0;
  double naive_delta = 0.99;
  int max_attempts = 1000;
};

/// Expands a mean specification into a p x L matrix.
MatrixXd expand_prior_mean(const MatrixXd& mean, Eigen::Index p,
                           Eigen::Index columns);
/// Expands a covariance specification into a p x p matrix.
MatrixXd expand_prior_cov(const MatrixXd& cov, Eigen::Index p);

/// Truncation sets used by the learners for a given true system.
StabilitySet mean_field_set(const SystemSpec& spec, const LearnerConfig& cfg);
StabilitySet relative_set(const SystemSpec& spec, int type,
                          const LearnerConfig& cfg);
StabilitySet joint_set(const SystemSpec& spec, const LearnerConfig& cfg);

struct PolicyKind {
  enum class Kind { kTsdeMf, kNaiveTsde, kOptimalOracle, kFixedGain };
  Kind kind = Kind::kTsdeMf;
  SelectionScheme scheme;
  MatrixXd fixed_gain;  // d_u x d_x, applied to each agent's own state

  /// Accepts "tsde_mf", "naive_tsde", "optimal", "fixed_gain".
  static PolicyKind parse(std::string_view text);
  std::string name() const;
};

/// Maps the current global state to per-agent controls (d_u x N).
class Controller {
 public:
  virtual ~Controller() = default;
  virtual MatrixXd act(const GlobalState& state) = 0;

  virtual int episodes_mf() const { return 0; }
  virtual std::vector<int> episodes_rel() const { return {}; }
  virtual int fallbacks() const { return 0; }
};

/// Coordinator running one mean-field actor and one relative actor per type.
class TsdeMfController : public Controller {
 public:
  TsdeMfController(const SystemSpec& spec, const LearnerConfig& cfg,
                   SelectionScheme scheme, std::uint64_t seed,
                   bool record_history = false);

  MatrixXd act(const GlobalState& state) override;

  int episodes_mf() const override { return mf_.episode_index; }
  std::vector<int> episodes_rel() const override;
  int fallbacks() const override;

  ActorState& mf_actor() { return mf_; }
  const ActorState& mf_actor() const { return mf_; }
  ActorState& rel_actor(int type) { return rel_[type]; }
  const ActorState& rel_actor(int type) const { return rel_[type]; }
  /// Agent whose transition will update type m's posterior next step.
  const Selection& pending_selection(int type) const {
    return selection_[type];
  }

 private:
  SystemSpec spec_;
  SelectionScheme scheme_;
  ActorState mf_;
  std::vector<ActorState> rel_;
  RandomSource sampling_;
  RandomSource selecting_;
  std::optional<VectorXd> prev_mf_z_;
  std::vector<MatrixXd> prev_rel_z_;
  std::vector<Selection> selection_;
};

/// Single TSDE learner on the joint n|M|-agent system.
class NaiveTsdeController : public Controller {
 public:
  NaiveTsdeController(const SystemSpec& spec, const LearnerConfig& cfg,
                      std::uint64_t seed);

  MatrixXd act(const GlobalState& state) override;
  int episodes_mf() const override { return actor_.episode_index; }
  int fallbacks() const override { return actor_.fallbacks; }

  ActorState& actor() { return actor_; }
  const JointSystem& joint() const { return joint_; }

 private:
  SystemSpec spec_;
  JointSystem joint_;
  ActorState actor_;
  RandomSource sampling_;
  std::optional<VectorXd> prev_z_;
};

/// Known-model optimal policy u^i = L_rel x_rel^i + L_mf^m x_mf.
class OptimalController : public Controller {
 public:
  explicit OptimalController(const SystemSpec& spec);
  MatrixXd act(const GlobalState& state) override;

 private:
  SystemSpec spec_;
  Plan plan_;
};

/// u^i = L x^i for every agent.
class FixedGainController : public Controller {
 public:
  FixedGainController(const SystemSpec& spec, MatrixXd gain);
  MatrixXd act(const GlobalState& state) override;

 private:
  SystemSpec spec_;
  MatrixXd gain_;
};

std::unique_ptr<Controller> make_controller(const PolicyKind& policy,
                                            const SystemSpec& spec,
                                            const LearnerConfig& cfg,
                                            std::uint64_t seed,
                                            bool record_history = false);

/// Snapshot of one run at a logged time step.
struct RunRecord {
  std::uint64_t seed = 0;
  long t = 0;
  double cum_cost = 0.0;
  double cum_regret = 0.0;
  double cum_rel_regret = 0.0;  // relative part: sum of rel costs - t J_rel
  double cum_mf_regret = 0.0;
  int episodes_mf = 0;
  std::vector<int> episodes_rel;
  double max_state_norm = 0.0;
  int fallbacks = 0;
  bool diverged = false;
};

/// Relative-system trajectory of a TSDE-MF run, kept for regret
/// decomposition.
struct RelativeTrace {
  std::vector<MatrixXd> states;    // T + 1 entries, d_x x N (relative)
  std::vector<MatrixXd> controls;  // T entries, d_u x N (relative)
  std::vector<std::vector<EpisodeRecord>> episodes;  // per type
};

struct ActorSummary {
  int episodes = 0;
  int det_halvings = 0;
};

struct RunResult {
  std::vector<RunRecord> records;
  std::vector<ActorSummary> actors;  // TSDE-MF: mean-field first, then types
  std::optional<RelativeTrace> trace;
  bool diverged = false;
};

struct RunOptions {
  long horizon = 1000;
  std::uint64_t seed = 0;
  long record_stride = 10;
  bool verbose = false;        // keep a RelativeTrace (TSDE-MF only)
  double init_state_var = 0.0;  // x_1 ~ N(0, var I); 0 starts at the origin
  double divergence_bound = 1e12;
  /// Average cost used for regret; computed from the plan when unset.
  std::optional<double> optimal_cost;
};

/// Simulates `policy` on `spec` and logs every `record_stride`-th step and
/// the final step.
RunResult run_policy(const PolicyKind& policy, const SystemSpec& spec,
                     const LearnerConfig& cfg, const RunOptions& options);

/// Same, with a caller-built controller.
RunResult run_controller(Controller& controller, const SystemSpec& spec,
                         const RunOptions& options);

}  // namespace mft
