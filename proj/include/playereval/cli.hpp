#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "playereval/crossfit.hpp"
#include "playereval/error.hpp"
#include "playereval/estimators.hpp"
#include "playereval/profiling.hpp"
#include "playereval/simulation.hpp"

namespace playereval {

struct RunConfig {
  std::string data;
  std::string schema;
  std::string out = "out";
  /// propensities.csv from an earlier estimate run (cluster only).
  std::string propensities;
  std::uint64_t seed = 20240601;
  /// Unset: 10 folds from 5000 records, else 5.
  std::optional<int> folds;
  double level = 0.95;
  std::vector<EstimandKind> estimands{EstimandKind::Direct, EstimandKind::Indirect, EstimandKind::RandomReplacement};
  std::vector<EstimatorKind> estimators{EstimatorKind::Substitution, EstimatorKind::OneStep, EstimatorKind::Tmle};
  /// Player labels; empty means every player.
  std::vector<std::string> players;
  std::vector<LearnerConfig> outcome_library;
  std::vector<LearnerConfig> marginal_library;
  std::vector<LearnerConfig> propensity_library;
  int stack_folds = 5;
  std::vector<double> funnel_levels = kDefaultFunnelLevels;
  Linkage linkage = Linkage::Complete;
  bool epsilon_pool = true;

  std::string fixture = "four-cell";
  Scenario scenario = Scenario::BothCorrect;
  int replications = 100;
  Index n = 2000;
  int threads = 1;
};

/// Mean, main-effects logistic, logistic with interactions, boosted stumps.
std::vector<LearnerConfig> default_library();
RunConfig default_run_config();

/// Fields present in the document override `base`. Throws Config.
RunConfig parse_run_config(std::string_view json_text, RunConfig base = default_run_config());
RunConfig load_run_config(const std::string& path, RunConfig base = default_run_config());
/// Resolved configuration; `include_out` false drops the output directory
/// so the hash does not depend on where results go.
std::string run_config_to_json(const RunConfig& config, bool include_out = true);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// 0 success, 1 estimation error, 2 configuration or input error.
int exit_code_for(ErrorKind kind);

int cmd_estimate(const RunConfig& config);
int cmd_simulate(const RunConfig& config);
int cmd_cluster(const RunConfig& config);

/// Writes error.json into `out_dir` (created if needed) and returns the exit code.
int report_error(const std::string& out_dir, ErrorKind kind, const std::string& message);

std::string dgp_to_json(const DgpSpec& dgp);
DgpSpec dgp_from_json(std::string_view json_text);
/// Built-in fixture name, or a path to a fixture JSON file.
DgpSpec resolve_fixture(const std::string& name_or_path);

/// Kicker-shaped attempt table: name, made, distance, outdoor, wind,
/// temperature, surface. Includes low-volume kickers, missing distances and
/// blank wind for indoor games.
std::string synthesize_kicker_csv(std::uint64_t seed);

std::string experiment_csv(const ExperimentReport& report);
std::string experiment_json(const ExperimentReport& report);

}  // namespace playereval
