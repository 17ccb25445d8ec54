// Command-line front end: run experiments, compare selection schemes, and
// hand aggregate CSVs to the figure renderer.

#include <spawn.h>
#include <sys/wait.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "CLI11.hpp"
#include "mft/harness.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace mft;

namespace {

struct RunArgs {
  std::string config;
  std::string out;
  std::optional<int> seeds;
  std::optional<long> horizon;
  std::optional<std::string> policy;
  std::optional<std::string> scheme;
  bool verbose_components = false;
};

ExperimentConfig resolve(const RunArgs& args) {
  ExperimentConfig cfg = load_config(args.config);
  if (args.seeds) cfg.seeds = *args.seeds;
  if (args.horizon) cfg.horizon = *args.horizon;
  try {
    if (args.policy) {
      const MatrixXd gain = cfg.policy.fixed_gain;
      const SelectionScheme scheme = cfg.policy.scheme;
      cfg.policy = PolicyKind::parse(*args.policy);
      cfg.policy.fixed_gain = gain;
      cfg.policy.scheme = scheme;
    }
    if (args.scheme) cfg.policy.scheme = SelectionScheme::parse(*args.scheme);
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

void write_components(const fs::path& path, const ExperimentConfig& cfg,
                      const ExperimentResult& result) {
  write_file(path, [&](std::ostream& out) {
    fmt::print(out,
               "seed,type,agent,r0,r1,r2,sum,excess,r1_realized,martingale\n");
    for (const RunResult& run : result.runs) {
      if (!run.trace || run.diverged) continue;
      const std::uint64_t seed = run.records.front().seed;
      const SystemSpec spec =
          cfg.truth_from_prior ? draw_true_system(cfg, seed) : cfg.system;
      for (int m = 0; m < spec.num_types; ++m) {
        const auto comps = regret_components(run, spec, m);
        for (std::size_t i = 0; i < comps.size(); ++i) {
          const RegretComponents& c = comps[i];
          fmt::print(out,
                     "{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},"
                     "{:.17g}\n",
                     seed, m, i, c.sampling, c.time_varying, c.mismatch,
                     c.sum(), c.excess, c.time_varying_realized, c.martingale);
        }
      }
    }
  });
}

int cmd_run(const RunArgs& args) {
  const ExperimentConfig cfg = resolve(args);
  ExperimentOptions options;
  options.verbose =
      args.verbose_components && cfg.policy.kind == PolicyKind::Kind::kTsdeMf;
  if (args.verbose_components && !options.verbose) {
    throw ConfigError("--verbose-components requires policy tsde_mf");
  }
  const ExperimentResult result = run_experiment(cfg, options);
  const fs::path out(args.out);
  write_file(out / "config.ini",
             [&](std::ostream& os) { write_config(os, cfg); });
  write_file(out / "runs.csv",
             [&](std::ostream& os) { write_runs_csv(os, result.runs); });
  write_file(out / "aggregate.csv", [&](std::ostream& os) {
    write_aggregate_csv(os, result.aggregate);
  });
  if (options.verbose) write_components(out / "components.csv", cfg, result);
  const AggregateRecord& last = result.aggregate.back();
  fmt::print("{} seeds, T={}: mean regret {:.6g} (std {:.6g}), diverged {}\n",
             cfg.seeds, last.t, last.regret_mean, last.regret_std,
             result.diverged);
  return 0;
}

int cmd_compare(const RunArgs& args) {
  const ExperimentConfig cfg = resolve(args);
  const fs::path out(args.out);
  for (const SchemeResult& r : selection_comparison(cfg, all_schemes())) {
    std::string label = r.scheme.name();
    std::replace(label.begin(), label.end(), ':', '_');
    write_file(out / fmt::format("selection_{}.csv", label),
               [&](std::ostream& os) { write_aggregate_csv(os, r.relative); });
    fmt::print("{}: mean relative regret {:.6g} at T={}\n", r.scheme.name(),
               r.relative.back().regret_mean, r.relative.back().t);
  }
  return 0;
}

int spawn(const std::vector<std::string>& argv) {
  std::vector<char*> raw;
  for (const std::string& a : argv) raw.push_back(const_cast<char*>(a.c_str()));
  raw.push_back(nullptr);
  pid_t pid = 0;
  if (posix_spawnp(&pid, raw[0], nullptr, nullptr, raw.data(), environ) != 0) {
    throw IoError("cannot launch '" + argv[0] + "' (is it on PATH?)");
  }
  int status = 0;
  if (waitpid(pid, &status, 0) < 0) throw IoError("waitpid failed");
  return WIFEXITED(status) ? WEXITSTATUS(status) : 1;
}

std::string inputs_arg(const std::vector<fs::path>& files) {
  std::string out;
  for (const fs::path& f : files) {
    if (!out.empty()) out += ',';
    out += f.parent_path().filename().string() + "/" + f.stem().string() + "=" +
           f.string();
  }
  return out;
}

int cmd_figures(const std::string& in, const std::string& out) {
  if (!fs::is_directory(in)) throw IoError("not a directory: '" + in + "'");
  std::vector<fs::path> aggregates, selections, tsde_mf, naive;
  for (const auto& entry : fs::recursive_directory_iterator(in)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    const std::string name = entry.path().filename().string();
    const std::string where = entry.path().string();
    if (name == "aggregate.csv") {
      aggregates.push_back(entry.path());
      if (where.find("naive_tsde") != std::string::npos) {
        naive.push_back(entry.path());
      } else if (where.find("tsde_mf") != std::string::npos) {
        tsde_mf.push_back(entry.path());
      }
    } else if (name.starts_with("selection_")) {
      selections.push_back(entry.path());
    }
  }
  std::sort(aggregates.begin(), aggregates.end());
  std::sort(selections.begin(), selections.end());
  std::sort(tsde_mf.begin(), tsde_mf.end());
  std::sort(naive.begin(), naive.end());
  fs::create_directories(out);

  std::vector<std::vector<std::string>> jobs;
  if (!aggregates.empty()) {
    jobs.push_back({"regret", inputs_arg(aggregates), "regret.png"});
    jobs.push_back({"regret_over_sqrt_t", inputs_arg(aggregates),
                    "regret_over_sqrt_t.png"});
  }
  if (!tsde_mf.empty() && !naive.empty()) {
    std::vector<fs::path> both = tsde_mf;
    both.insert(both.end(), naive.begin(), naive.end());
    jobs.push_back({"comparison", inputs_arg(both), "comparison.png"});
  }
  if (!selections.empty()) {
    jobs.push_back({"selection", inputs_arg(selections), "selection.png"});
  }
  if (jobs.empty()) throw IoError("no aggregate CSVs found under '" + in + "'");
  for (const auto& job : jobs) {
    const int code =
        spawn({"mft-figures", "--kind", job[0], "--inputs", job[1], "--out",
               (fs::path(out) / job[2]).string()});
    if (code != 0) return code;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thompson sampling for linear-quadratic mean-field teams"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "simulate one policy over many seeds");
  run->add_option("--config", run_args.config, "INI config")->required();
  run->add_option("--out", run_args.out, "output directory")->required();
  run->add_option("--seeds", run_args.seeds, "number of seeds")
      ->check(CLI::PositiveNumber);
  run->add_option("--horizon", run_args.horizon, "horizon T")
      ->check(CLI::PositiveNumber);
  run->add_option("--policy", run_args.policy,
                  "tsde_mf | naive_tsde | optimal | fixed_gain");
  run->add_option("--scheme", run_args.scheme,
                  "max_quad | fixed[:i] | random | all");
  run->add_flag("--verbose-components", run_args.verbose_components,
                "write per-agent regret components (tsde_mf)");

  RunArgs cmp_args;
  auto* cmp = app.add_subcommand("compare-selection",
                                 "relative regret under each selection scheme");
  cmp->add_option("--config", cmp_args.config, "INI config")->required();
  cmp->add_option("--out", cmp_args.out, "output directory")->required();
  cmp->add_option("--seeds", cmp_args.seeds, "number of seeds")
      ->check(CLI::PositiveNumber);
  cmp->add_option("--horizon", cmp_args.horizon, "horizon T")
      ->check(CLI::PositiveNumber);

  std::string fig_in, fig_out;
  auto* fig = app.add_subcommand("figures", "render figures via mft-figures");
  fig->add_option("--in", fig_in, "directory of experiment outputs")->required();
  fig->add_option("--out", fig_out, "figure directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_args);
    if (*cmp) return cmd_compare(cmp_args);
    if (*fig) return cmd_figures(fig_in, fig_out);
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
