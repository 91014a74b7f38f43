#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "playereval/core.hpp"
#include "playereval/learners.hpp"

namespace playereval {

struct FoldAssignment {
  int fold_count = 0;
  /// Validation fold of each record.
  std::vector<int> fold_of;
  std::vector<std::vector<Index>> training;
  std::vector<std::vector<Index>> validation;

  Index size() const { return static_cast<Index>(fold_of.size()); }
};

/// Player-stratified folds: each player's records are shuffled with `seed` and
/// dealt round-robin, continuing the fold counter across players so fold sizes
/// differ by at most one. Fails if any player would be missing from a
/// training set.
FoldAssignment make_folds(const Eigen::VectorXi& players, int player_count, int folds,
                          std::uint64_t seed);

/// 10 folds from 5000 records upward, otherwise 5.
int default_fold_count(Index n);

/// Empirical marginals over a row set.
struct FoldMarginals {
  /// P(A = a)
  Eigen::VectorXd player;
  /// P(X in X')
  double x_condition = 1.0;
  /// P(A = a, X in X')
  Eigen::VectorXd player_and_x;
};

FoldMarginals empirical_marginals(const Dataset& data, const std::vector<Index>& rows,
                                  const XCondition& x_condition);
FoldMarginals empirical_marginals(const Dataset& data, const XCondition& x_condition);

/// Predictions of one fold's models for every record (training rows are
/// in-sample for that fold).
struct FoldPredictions {
  /// mu_j(A_i, X_i)
  Eigen::VectorXd mu_observed;
  Eigen::VectorXd m_bar;
  Eigen::MatrixXd pi;
};

struct NuisanceMatrices {
  /// mu(i, a') from the model trained without record i's fold.
  Eigen::MatrixXd mu;
  Eigen::VectorXd m_bar;
  Eigen::MatrixXd pi;
  std::vector<FoldMarginals> fold_marginals;
  FoldMarginals pooled_marginals;
  /// Empty unless requested; needed for train-fold TMLE fluctuations.
  std::vector<FoldPredictions> fold_predictions;
  XCondition x_condition;

  Index size() const { return mu.rows(); }
  int player_count() const { return static_cast<int>(mu.cols()); }
};

struct NuisanceLearners {
  std::vector<LearnerConfig> outcome;
  std::vector<LearnerConfig> marginal_outcome;
  std::vector<LearnerConfig> propensity;
  int stack_folds = 5;
  std::uint64_t seed = 0;
  bool keep_fold_predictions = true;
  bool parallel = false;
};

/// Outcome design: covariates followed by indicators for players 1..m-1.
Eigen::MatrixXd outcome_features(const Eigen::MatrixXd& x, const Eigen::VectorXi& players,
                                 int player_count);

NuisanceMatrices fit_nuisances(const Dataset& data, const FoldAssignment& folds,
                               const NuisanceLearners& learners, const XCondition& x_condition);

}  // namespace playereval
