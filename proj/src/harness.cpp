#include "mft/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace mft {
namespace {

double series_value(const RunRecord& r, RegretSeries series) {
  return series == RegretSeries::kTotal ? r.cum_regret : r.cum_rel_regret;
}

std::string join_episodes(const std::vector<int>& episodes) {
  std::string out;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    if (i > 0) out += ';';
    out += std::to_string(episodes[i]);
  }
  return out;
}

RunOptions run_options(const ExperimentConfig& cfg, std::uint64_t seed,
                       bool verbose) {
  RunOptions o;
  o.horizon = cfg.horizon;
  o.seed = seed;
  o.record_stride = cfg.record_stride;
  o.verbose = verbose;
  o.init_state_var = cfg.init_state_var;
  return o;
}

}  // namespace

std::vector<AggregateRecord> aggregate(const std::vector<RunResult>& runs,
                                       RegretSeries series) {
  std::vector<AggregateRecord> out;
  if (runs.empty()) return out;
  const std::size_t steps = runs.front().records.size();
  for (const RunResult& r : runs) {
    if (r.records.size() != steps) {
      throw InvalidInput("aggregate: runs logged different steps");
    }
  }
  out.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    AggregateRecord a;
    a.t = runs.front().records[k].t;
    double sum = 0.0;
    for (const RunResult& r : runs) {
      if (r.records[k].t != a.t) {
        throw InvalidInput("aggregate: runs logged different steps");
      }
      if (r.records[k].diverged) continue;
      sum += series_value(r.records[k], series);
      ++a.n_eff;
    }
    if (a.n_eff > 0) {
      a.regret_mean = sum / a.n_eff;
      double ss = 0.0;
      for (const RunResult& r : runs) {
        if (r.records[k].diverged) continue;
        const double d = series_value(r.records[k], series) - a.regret_mean;
        ss += d * d;
      }
      a.regret_std = a.n_eff > 1 ? std::sqrt(ss / (a.n_eff - 1)) : 0.0;
    } else {
      a.regret_mean = std::numeric_limits<double>::quiet_NaN();
      a.regret_std = std::numeric_limits<double>::quiet_NaN();
    }
    a.regret_over_sqrt_t = a.regret_mean / std::sqrt(static_cast<double>(a.t));
    out.push_back(a);
  }
  return out;
}

int seed_threads(int requested) {
  if (requested >= 1) return requested;
  if (const char* env = std::getenv("MFT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

SystemSpec draw_true_system(const ExperimentConfig& cfg, std::uint64_t seed) {
  const SystemSpec& base = cfg.system;
  LearnerConfig prior = cfg.prior;
  prior.reference = StabilitySet::Reference::kCandidate;
  RandomSource rng(seed, 3);
  const int dx = base.d_x;
  const int du = base.d_u;
  const int nt = base.num_types;

  SystemSpec truth = base;
  for (int m = 0; m < nt; ++m) {
    ColumnPosterior post(expand_prior_mean(prior.rel_mean, dx + du, dx),
                         expand_prior_cov(prior.rel_cov, dx + du), 1.0,
                         relative_set(base, m, prior));
    const SampleResult s = sample_truncated(post, rng, prior.max_attempts);
    truth.per_type[m].A = s.theta.topRows(dx).transpose();
    truth.per_type[m].B = s.theta.bottomRows(du).transpose();
  }
  ColumnPosterior post(expand_prior_mean(prior.mf_mean, nt * (dx + du), nt * dx),
                       expand_prior_cov(prior.mf_cov, nt * (dx + du)), 1.0,
                       mean_field_set(base, prior));
  const SampleResult s = sample_truncated(post, rng, prior.max_attempts);
  const MatrixXd a_bar = s.theta.topRows(nt * dx).transpose();
  const MatrixXd b_bar = s.theta.bottomRows(nt * du).transpose();
  for (int m = 0; m < nt; ++m) {
    TypeParams& p = truth.per_type[m];
    p.D = a_bar.middleRows(m * dx, dx);
    p.D.middleCols(m * dx, dx) -= p.A;
    p.E = b_bar.middleRows(m * dx, dx);
    p.E.middleCols(m * du, du) -= p.B;
  }
  return truth;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const ExperimentOptions& options) {
  cfg.validate();
  ExperimentResult result;
  result.runs.resize(cfg.seeds);
  const int threads = std::min(seed_threads(options.threads), cfg.seeds);

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int i = next++; i < cfg.seeds; i = next++) {
      try {
        const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(i);
        const SystemSpec spec =
            cfg.truth_from_prior ? draw_true_system(cfg, seed) : cfg.system;
        LearnerConfig prior = cfg.prior;
        if (cfg.truth_from_prior) {
          prior.reference = StabilitySet::Reference::kCandidate;
        }
        result.runs[i] = run_policy(cfg.policy, spec, prior,
                                    run_options(cfg, seed, options.verbose));
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = cfg.seeds;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (const RunResult& r : result.runs) result.diverged += r.diverged ? 1 : 0;
  result.aggregate = aggregate(result.runs);
  return result;
}

void write_runs_csv(std::ostream& out, const std::vector<RunResult>& runs) {
  fmt::print(out,
             "seed,t,cum_cost,cum_regret,episodes_mf,episodes_rel,"
             "max_state_norm,fallbacks,diverged\n");
  for (const RunResult& run : runs) {
    for (const RunRecord& r : run.records) {
      fmt::print(out, "{},{},{:.17g},{:.17g},{},{},{:.17g},{},{}\n", r.seed,
                 r.t, r.cum_cost, r.cum_regret, r.episodes_mf,
                 join_episodes(r.episodes_rel), r.max_state_norm, r.fallbacks,
                 r.diverged ? 1 : 0);
    }
  }
}

void write_aggregate_csv(std::ostream& out,
                         const std::vector<AggregateRecord>& agg) {
  fmt::print(out, "t,regret_mean,regret_std,regret_over_sqrt_t,n_eff\n");
  for (const AggregateRecord& a : agg) {
    fmt::print(out, "{},{:.17g},{:.17g},{:.17g},{}\n", a.t, a.regret_mean,
               a.regret_std, a.regret_over_sqrt_t, a.n_eff);
  }
}

void write_file(const std::filesystem::path& path,
                const std::function<void(std::ostream&)>& body) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) {
      throw IoError("cannot create directory '" +
                    path.parent_path().string() + "': " + ec.message());
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  body(out);
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<RegretComponents> regret_components(const RunResult& run,
                                                const SystemSpec& spec,
                                                int type) {
  if (!run.trace) {
    throw InvalidInput("regret_components: run was not made in verbose mode");
  }
  if (type < 0 || type >= spec.num_types) {
    throw InvalidInput("regret_components: type out of range");
  }
  const RelativeTrace& tr = *run.trace;
  const long horizon = static_cast<long>(tr.controls.size());
  if (static_cast<long>(tr.states.size()) != horizon + 1) {
    throw InvalidInput("regret_components: trace is incomplete (diverged run?)");
  }
  const std::vector<EpisodeRecord>& eps = tr.episodes[type];
  if (eps.empty()) throw InvalidInput("regret_components: no episodes logged");
  for (const EpisodeRecord& e : eps) {
    if (!e.gain) {
      throw InvalidInput("regret_components: episode without a Riccati solution");
    }
  }

  const int n = spec.agents_per_type;
  const int dx = spec.d_x;
  const TypeParams& p = spec.per_type[type];
  const MatrixXd theta =
      ThetaRel::from_model(p.A, p.B).value;
  const double noise = relative_noise_var(spec);
  const double j_true = relative_avg_cost(spec, plan(spec).rel[type]);

  std::vector<RegretComponents> out(n);
  std::size_t k = 0;
  for (long t = 1; t <= horizon; ++t) {
    while (k + 1 < eps.size() && eps[k + 1].start <= t) ++k;
    const EpisodeRecord& e = eps[k];
    const MatrixXd& S = e.gain->S;
    const double j_k = noise * S.trace();
    const MatrixXd& xs = tr.states[t - 1];
    const MatrixXd& us = tr.controls[t - 1];
    const MatrixXd& xn = tr.states[t];
    for (int i = 0; i < n; ++i) {
      const int col = type * n + i;
      VectorXd z(dx + spec.d_u);
      z << xs.col(col), us.col(col);
      const VectorXd x = xs.col(col);
      const VectorXd mean_true = theta.transpose() * z;
      const VectorXd mean_k = e.theta.transpose() * z;
      const double v_x = x.dot(S * x);
      const double v_true = mean_true.dot(S * mean_true);
      const double v_k = mean_k.dot(S * mean_k);
      const VectorXd x_next = xn.col(col);
      RegretComponents& c = out[i];
      c.sampling += j_k - j_true;
      c.time_varying += v_x - v_true - j_k;
      c.mismatch += v_true - v_k;
      c.time_varying_realized += v_x - x_next.dot(S * x_next);
      c.excess += x.dot(p.Q * x) +
                  us.col(col).dot(p.R * us.col(col)) - j_true;
    }
  }
  for (RegretComponents& c : out) {
    c.martingale = c.time_varying - c.time_varying_realized;
  }
  return out;
}

std::vector<SchemeResult> selection_comparison(
    const ExperimentConfig& cfg, const std::vector<SelectionScheme>& schemes,
    const ExperimentOptions& options) {
  std::vector<SchemeResult> out;
  for (const SelectionScheme& scheme : schemes) {
    ExperimentConfig c = cfg;
    c.policy.kind = PolicyKind::Kind::kTsdeMf;
    c.policy.scheme = scheme;
    const ExperimentResult r = run_experiment(c, options);
    out.push_back({scheme, aggregate(r.runs, RegretSeries::kRelative),
                   r.diverged});
  }
  return out;
}

std::vector<SelectionScheme> all_schemes() {
  return {SelectionScheme::parse("max_quad"), SelectionScheme::parse("fixed:0"),
          SelectionScheme::parse("random"), SelectionScheme::parse("all")};
}

}  // namespace mft
