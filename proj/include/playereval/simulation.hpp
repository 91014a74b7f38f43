#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "playereval/core.hpp"
#include "playereval/crossfit.hpp"
#include "playereval/estimators.hpp"
#include "playereval/learners.hpp"

namespace playereval {

/// Finite covariate support.
struct DiscreteCovariates {
  std::vector<Eigen::VectorXd> cells;
  Eigen::VectorXd probabilities;
};

struct CovariateComponent {
  enum class Kind { Uniform, Normal };
  Kind kind = Kind::Uniform;
  /// Uniform: [first, second]. Normal: mean, sd.
  double first = 0.0;
  double second = 1.0;
};

/// Independent continuous components.
struct ContinuousCovariates {
  std::vector<CovariateComponent> components;
};

/// Per-player linear scores: intercept[a] + slope.row(a) * x, plus
/// interaction[a] * x0 * x1 when `interaction` is non-empty.
struct LinearScores {
  Eigen::VectorXd intercept;
  Eigen::MatrixXd slope;
  Eigen::VectorXd interaction;

  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const;
};

/// cells x m table, indexed by discrete cell.
using CellTable = Eigen::MatrixXd;

struct DgpSpec {
  std::string name;
  int player_count = 2;
  std::vector<std::string> covariate_names;
  std::variant<DiscreteCovariates, ContinuousCovariates> covariates;
  /// Softmax of the scores, or an explicit table (discrete only).
  std::variant<LinearScores, CellTable> propensity;
  /// Expit of the scores, or an explicit table (discrete only).
  std::variant<LinearScores, CellTable> outcome;
  std::uint64_t seed = 0;

  bool is_discrete() const { return std::holds_alternative<DiscreteCovariates>(covariates); }
  Index dimension() const;

  /// pi0(. | x). Table lookups require x to be one of the cells.
  Eigen::VectorXd propensity_at(const Eigen::VectorXd& x) const;
  /// mu0(., x).
  Eigen::VectorXd outcome_at(const Eigen::VectorXd& x) const;
};

/// Throws InvalidDgp when the spec is inconsistent.
void validate(const DgpSpec& dgp);

/// Player labels P1..Pm.
std::vector<std::string> simulated_player_labels(int player_count);

Dataset generate(const DgpSpec& dgp, Index n, std::uint64_t seed);

/// Dataset whose cell counts are exactly total * p(x) pi(a|x) mu(a,x) (and the
/// complementary failures). Fails unless every count is an integer.
Dataset population_dataset(const DgpSpec& dgp, Index total);

/// Cell probabilities and nuisance tables of a discrete DGP.
struct DiscreteLaw {
  std::vector<Eigen::VectorXd> cells;
  Eigen::VectorXd probabilities;
  Eigen::MatrixXd pi;
  Eigen::MatrixXd mu;
};

DiscreteLaw discrete_law(const DgpSpec& dgp);

/// Identified functional by exact enumeration. Discrete DGPs only.
double oracle_exact(const DgpSpec& dgp, const EstimandSpec& spec);
double oracle_exact(const DiscreteLaw& law, const EstimandSpec& spec);

/// E[D^2] of the EIF at the true law.
double eif_second_moment(const DgpSpec& dgp, const EstimandSpec& spec);

struct OracleValues {
  Eigen::VectorXd direct;
  Eigen::VectorXd indirect;
  Eigen::VectorXd rand;
  Eigen::VectorXd direct_second_moment;
  Eigen::VectorXd indirect_second_moment;
  Eigen::VectorXd rand_second_moment;
  /// E[Y | A = a, X in X'] minus the counterfactual rate.
  Eigen::VectorXd indirect_contrast;
  Eigen::VectorXd rand_contrast;
};

OracleValues oracle_values(const DgpSpec& dgp, const XCondition& x_condition = {});

struct MonteCarloOracle {
  double estimate = 0.0;
  double mc_se = 0.0;
};

/// Plug-in of the true nuisances over simulated draws of (X, A).
MonteCarloOracle oracle_mc(const DgpSpec& dgp, const EstimandSpec& spec, Index draws, std::uint64_t seed);

/// True nuisances evaluated at every record, with fold marginals from `folds`
/// and per-fold predictions equal to the truth.
NuisanceMatrices exact_nuisances(const DgpSpec& dgp, const Dataset& data, const FoldAssignment& folds,
                                 const XCondition& x_condition = {});

enum class Scenario { BothCorrect, MuMisspecified, PiMisspecified, BothMisspecified };

std::string_view to_string(Scenario scenario);
Scenario parse_scenario(std::string_view text);

inline constexpr int kRecommendedReplications = 50;

struct ExperimentConfig {
  Scenario scenario = Scenario::BothCorrect;
  Index n = 2000;
  int replications = 100;
  std::vector<EstimatorKind> estimators{EstimatorKind::Substitution, EstimatorKind::OneStep,
                                        EstimatorKind::Tmle};
  std::vector<EstimandKind> estimands{EstimandKind::Direct, EstimandKind::Indirect,
                                      EstimandKind::RandomReplacement};
  std::vector<int> focal_players{0};
  XCondition x_condition;
  std::uint64_t seed = 1;
  int folds = 5;
  int stack_folds = 5;
  /// Library for correctly specified nuisances.
  std::vector<LearnerConfig> library;
  EstimatorOptions options;
  /// Draws for oracle_mc when the DGP is continuous.
  Index oracle_draws = 2'000'000;
  /// Replications run on this many threads; results do not depend on it.
  int threads = 1;
};

/// Mean-only plus logistic with pairwise interactions.
std::vector<LearnerConfig> default_simulation_library();

struct ExperimentRow {
  EstimatorKind estimator = EstimatorKind::Tmle;
  EstimandKind estimand = EstimandKind::Direct;
  int focal_player = 0;
  double truth = 0.0;
  int completed = 0;
  int failures = 0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double empirical_se = 0.0;
  /// empirical_se / sqrt(completed)
  double mc_se = 0.0;
  double mean_estimated_se = 0.0;
  double coverage = 0.0;
  double max_abs_eif_mean = 0.0;
  std::vector<double> estimates;
  std::vector<double> standard_errors;
};

struct ExperimentReport {
  std::string dgp_name;
  Scenario scenario = Scenario::BothCorrect;
  Index n = 0;
  int replications = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
  std::vector<ExperimentRow> rows;

  const ExperimentRow& row(EstimatorKind estimator, EstimandKind estimand, int focal_player = 0) const;
};

/// Seed of replication `rep`; independent of scheduling.
std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t rep);

ExperimentReport run_experiment(const DgpSpec& dgp, const ExperimentConfig& config);

/// Exact von Mises check for theta(a, a') = E_P[mu(a', X) | A = a, X in X'].
struct VonMisesCheck {
  double theta_p = 0.0;
  double theta_f = 0.0;
  /// E_P[D_F(Z)]
  double eif_mean = 0.0;
  /// Second-order remainder R(P, F) in closed form.
  double remainder = 0.0;
  /// |(theta_F - theta_P) - (-E_P D_F + R)|
  double discrepancy = 0.0;
};

VonMisesCheck von_mises_check(const DiscreteLaw& p, const DiscreteLaw& f, int a, int a_prime,
                              const XCondition& x_condition = {});

/// Largest discrepancy over every (a, a') pair; `perturbed` shares the cells
/// of `dgp`.
double check_von_mises_remainder(const DgpSpec& dgp, const DiscreteLaw& perturbed,
                                 const XCondition& x_condition = {});

/// Bundled fixtures: four-cell, four-cell-balanced, ten-cell, kicker,
/// positivity-weak, positivity-strong.
DgpSpec builtin_fixture(std::string_view name);
std::vector<std::string> builtin_fixture_names();

}  // namespace playereval
