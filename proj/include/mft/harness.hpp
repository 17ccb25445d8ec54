#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mft/config.hpp"

namespace mft {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Across-seed statistics of cumulative regret at one logged step.
struct AggregateRecord {
  long t = 0;
  double regret_mean = 0.0;
  double regret_std = 0.0;  // sample std (n - 1); 0 for a single seed
  double regret_over_sqrt_t = 0.0;
  int n_eff = 0;  // seeds that had not diverged by t
};

enum class RegretSeries { kTotal, kRelative };

/// Deterministic fold over runs in index order. All runs must log the same
/// steps.
std::vector<AggregateRecord> aggregate(const std::vector<RunResult>& runs,
                                       RegretSeries series = RegretSeries::kTotal);

struct ExperimentOptions {
  bool verbose = false;  // keep relative traces for regret_components
  int threads = -1;      // < 0: MFT_THREADS (0 or unset = hardware)
};

struct ExperimentResult {
  std::vector<RunResult> runs;  // seed base + i at index i
  std::vector<AggregateRecord> aggregate;
  int diverged = 0;
};

/// Threads used for seeds: `requested` when >= 1, else MFT_THREADS, else the
/// hardware concurrency.
int seed_threads(int requested = -1);

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const ExperimentOptions& options = {});

/// True system for one seed of a truth-from-prior experiment: each block is
/// drawn from the truncated prior with the candidate's own closed loop.
SystemSpec draw_true_system(const ExperimentConfig& cfg, std::uint64_t seed);

void write_runs_csv(std::ostream& out, const std::vector<RunResult>& runs);
void write_aggregate_csv(std::ostream& out,
                         const std::vector<AggregateRecord>& agg);
/// Creates `path`'s parent directories; throws IoError.
void write_file(const std::filesystem::path& path,
                const std::function<void(std::ostream&)>& body);

/// Empirical terms of the relative regret split for one agent.
struct RegretComponents {
  double sampling = 0.0;      // R0: sum_k T_k J(theta_k) - T J(theta)
  double time_varying = 0.0;  // R1, conditional form
  double mismatch = 0.0;      // R2
  double excess = 0.0;        // sum_t c(x_t, u_t) - T J(theta)
  double time_varying_realized = 0.0;  // R1 telescoped on realized states
  double martingale = 0.0;             // time_varying - time_varying_realized

  double sum() const { return sampling + time_varying + mismatch; }
};

/// One entry per agent of `type`, for a run made with verbose logging.
/// Throws InvalidInput without a trace or when an episode has no gain.
std::vector<RegretComponents> regret_components(const RunResult& run,
                                                const SystemSpec& spec,
                                                int type);

struct SchemeResult {
  SelectionScheme scheme;
  std::vector<AggregateRecord> relative;  // R_rel(T), averaged over agents
  int diverged = 0;
};

/// Runs `cfg` once per scheme with everything else unchanged.
std::vector<SchemeResult> selection_comparison(
    const ExperimentConfig& cfg, const std::vector<SelectionScheme>& schemes,
    const ExperimentOptions& options = {});

/// MaxQuadForm, Fixed(0), RandomUniform, AllAgents.
std::vector<SelectionScheme> all_schemes();

}  // namespace mft
