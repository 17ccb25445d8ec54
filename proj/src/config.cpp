#include "mft/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace mft {
namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_number(const std::string& token) {
  if (token == "inf" || token == "+inf") {
    return std::numeric_limits<double>::infinity();
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size() || token.empty()) {
    throw ConfigError("not a number: '" + token + "'");
  }
  return v;
}

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

template <typename T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
  const auto node = tree.get_optional<std::string>(pt::ptree::path_type(key, '/'));
  if (!node) return fallback;
  const std::string text = trim(*node);
  if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("not a boolean for " + key + ": '" + text + "'");
  } else {
    const double v = parse_number(text);
    if constexpr (std::is_integral_v<T>) {
      if (v != std::floor(v)) {
        throw ConfigError("expected an integer for " + key);
      }
    }
    return static_cast<T>(v);
  }
}

std::optional<MatrixXd> get_matrix(const pt::ptree& tree,
                                   const std::string& key) {
  const auto node = tree.get_optional<std::string>(pt::ptree::path_type(key, '/'));
  if (!node) return std::nullopt;
  try {
    return parse_matrix(*node);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

MatrixXd require_matrix(const pt::ptree& tree, const std::string& key) {
  auto m = get_matrix(tree, key);
  if (!m) throw ConfigError("missing key " + key);
  return *m;
}

void put(pt::ptree& tree, const std::string& key, const std::string& value) {
  tree.put(pt::ptree::path_type(key, '/'), value);
}

}  // namespace

MatrixXd parse_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::stringstream by_row(text);
  std::string row_text;
  while (std::getline(by_row, row_text, ';')) {
    std::stringstream by_entry(row_text);
    std::string token;
    std::vector<double> row;
    while (by_entry >> token) row.push_back(parse_number(token));
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("empty matrix");
  const std::size_t cols = rows.front().size();
  MatrixXd m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw ConfigError("ragged matrix '" + text + "'");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = rows[r][c];
  }
  return m;
}

std::string format_matrix(const MatrixXd& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r > 0) out += "; ";
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ' ';
      out += format_number(m(r, c));
    }
  }
  return out;
}

void ExperimentConfig::validate() const {
  if (horizon < 1) throw ConfigError("run.horizon must be >= 1");
  if (seeds < 1) throw ConfigError("run.seeds must be >= 1");
  if (record_stride < 1) throw ConfigError("run.record_stride must be >= 1");
  if (prior.max_attempts < 1) throw ConfigError("prior.max_attempts must be >= 1");
  try {
    system.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
  if (policy.kind == PolicyKind::Kind::kTsdeMf &&
      policy.scheme.kind == SelectionScheme::Kind::kFixed &&
      policy.scheme.fixed_index >= system.agents_per_type) {
    throw ConfigError("run.scheme fixed index must be below agents_per_type");
  }
}

ExperimentConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  ExperimentConfig cfg;
  SystemSpec& s = cfg.system;
  s.num_types = get<int>(tree, "system/num_types", 1);
  s.agents_per_type = get<int>(tree, "system/agents_per_type", 1);
  s.d_x = get<int>(tree, "system/d_x", 1);
  s.d_u = get<int>(tree, "system/d_u", 1);
  if (s.num_types < 1 || s.agents_per_type < 1 || s.d_x < 1 || s.d_u < 1) {
    throw ConfigError("system sizes must be positive");
  }
  for (int m = 0; m < s.num_types; ++m) {
    auto block = [&](const std::string& name) {
      const std::string suffixed = "system/" + name + "_" + std::to_string(m);
      if (auto v = get_matrix(tree, suffixed)) return *v;
      return require_matrix(tree, "system/" + name);
    };
    s.per_type.push_back(TypeParams{block("A"), block("B"), block("D"),
                                    block("E"), block("Q"), block("R")});
  }
  s.Q_bar = require_matrix(tree, "system/Q_bar");
  s.R_bar = require_matrix(tree, "system/R_bar");
  s.sigma_w2 = get<double>(tree, "system/sigma_w2", 0.0);
  s.sigma_v2 = get<double>(tree, "system/sigma_v2", 0.0);
  s.sigma_v02 = get<double>(tree, "system/sigma_v02", 0.0);

  LearnerConfig& p = cfg.prior;
  if (auto v = get_matrix(tree, "prior/mf_mean")) p.mf_mean = *v;
  if (auto v = get_matrix(tree, "prior/mf_cov")) p.mf_cov = *v;
  if (auto v = get_matrix(tree, "prior/rel_mean")) p.rel_mean = *v;
  if (auto v = get_matrix(tree, "prior/rel_cov")) p.rel_cov = *v;
  p.delta = get<double>(tree, "prior/delta", p.delta);
  p.naive_cov = get<double>(tree, "prior/naive_cov", p.naive_cov);
  p.naive_delta = get<double>(tree, "prior/naive_delta", p.naive_delta);
  p.max_attempts = get<int>(tree, "prior/max_attempts", p.max_attempts);
  const std::string reference =
      get<std::string>(tree, "prior/reference", "nominal");
  if (reference == "nominal") {
    p.reference = StabilitySet::Reference::kNominal;
  } else if (reference == "candidate") {
    p.reference = StabilitySet::Reference::kCandidate;
  } else {
    throw ConfigError("prior.reference must be 'nominal' or 'candidate'");
  }
  const std::string truth = get<std::string>(tree, "prior/truth", "fixed");
  if (truth != "fixed" && truth != "prior") {
    throw ConfigError("prior.truth must be 'fixed' or 'prior'");
  }
  cfg.truth_from_prior = truth == "prior";

  try {
    cfg.policy = PolicyKind::parse(get<std::string>(tree, "run/policy", "tsde_mf"));
    cfg.policy.scheme =
        SelectionScheme::parse(get<std::string>(tree, "run/scheme", "max_quad"));
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (auto v = get_matrix(tree, "run/fixed_gain")) cfg.policy.fixed_gain = *v;
  cfg.horizon = get<long>(tree, "run/horizon", cfg.horizon);
  cfg.seeds = get<int>(tree, "run/seeds", cfg.seeds);
  cfg.base_seed = get<std::uint64_t>(tree, "run/base_seed", cfg.base_seed);
  cfg.record_stride = get<long>(tree, "run/record_stride", cfg.record_stride);
  cfg.init_state_var = get<double>(tree, "run/init_state_var", 0.0);
  cfg.output = get<std::string>(tree, "run/output", "");
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& cfg) {
  pt::ptree tree;
  const SystemSpec& s = cfg.system;
  put(tree, "system/num_types", std::to_string(s.num_types));
  put(tree, "system/agents_per_type", std::to_string(s.agents_per_type));
  put(tree, "system/d_x", std::to_string(s.d_x));
  put(tree, "system/d_u", std::to_string(s.d_u));
  for (int m = 0; m < s.num_types; ++m) {
    const std::string suffix = m == 0 ? "" : "_" + std::to_string(m);
    const TypeParams& t = s.per_type[m];
    put(tree, "system/A" + suffix, format_matrix(t.A));
    put(tree, "system/B" + suffix, format_matrix(t.B));
    put(tree, "system/D" + suffix, format_matrix(t.D));
    put(tree, "system/E" + suffix, format_matrix(t.E));
    put(tree, "system/Q" + suffix, format_matrix(t.Q));
    put(tree, "system/R" + suffix, format_matrix(t.R));
  }
  put(tree, "system/Q_bar", format_matrix(s.Q_bar));
  put(tree, "system/R_bar", format_matrix(s.R_bar));
  put(tree, "system/sigma_w2", format_number(s.sigma_w2));
  put(tree, "system/sigma_v2", format_number(s.sigma_v2));
  put(tree, "system/sigma_v02", format_number(s.sigma_v02));

  const LearnerConfig& p = cfg.prior;
  put(tree, "prior/mf_mean", format_matrix(p.mf_mean));
  put(tree, "prior/mf_cov", format_matrix(p.mf_cov));
  put(tree, "prior/rel_mean", format_matrix(p.rel_mean));
  put(tree, "prior/rel_cov", format_matrix(p.rel_cov));
  put(tree, "prior/delta", format_number(p.delta));
  put(tree, "prior/reference",
      p.reference == StabilitySet::Reference::kNominal ? "nominal"
                                                       : "candidate");
  put(tree, "prior/naive_cov", format_number(p.naive_cov));
  put(tree, "prior/naive_delta", format_number(p.naive_delta));
  put(tree, "prior/max_attempts", std::to_string(p.max_attempts));
  put(tree, "prior/truth", cfg.truth_from_prior ? "prior" : "fixed");

  put(tree, "run/policy", cfg.policy.name());
  put(tree, "run/scheme", cfg.policy.scheme.name());
  if (cfg.policy.fixed_gain.size() > 0) {
    put(tree, "run/fixed_gain", format_matrix(cfg.policy.fixed_gain));
  }
  put(tree, "run/horizon", std::to_string(cfg.horizon));
  put(tree, "run/seeds", std::to_string(cfg.seeds));
  put(tree, "run/base_seed", std::to_string(cfg.base_seed));
  put(tree, "run/record_stride", std::to_string(cfg.record_stride));
  put(tree, "run/init_state_var", format_number(cfg.init_state_var));
  if (!cfg.output.empty()) put(tree, "run/output", cfg.output);
  pt::write_ini(out, tree);
}

ExperimentConfig scalar_regret_config(int agents) {
  ExperimentConfig cfg;
  cfg.system = scalar_system(agents, 1.0, 0.3, 0.5, 0.2, 1.0, 1.0, 1.0, 0.5,
                             1.0, 0.5, 0.5);
  cfg.prior.mf_mean = parse_matrix("1 1");
  cfg.prior.rel_mean = parse_matrix("1 1");
  cfg.prior.mf_cov = MatrixXd::Identity(1, 1);
  cfg.prior.rel_cov = MatrixXd::Identity(1, 1);
  cfg.prior.delta = 0.99;
  cfg.prior.naive_delta = 0.99;
  cfg.policy = PolicyKind::parse("tsde_mf");
  cfg.horizon = 5000;
  cfg.seeds = 500;
  cfg.record_stride = 10;
  return cfg;
}

ExperimentConfig scalar_comparison_config(int agents) {
  ExperimentConfig cfg = scalar_regret_config(agents);
  cfg.system.sigma_v2 = 0.0;
  cfg.system.sigma_v02 = 0.0;
  cfg.prior.mf_mean = parse_matrix("0 0");
  cfg.prior.rel_mean = parse_matrix("0 0");
  cfg.prior.delta = 2.3;
  cfg.prior.naive_delta = 2.3;
  return cfg;
}

}  // namespace mft
