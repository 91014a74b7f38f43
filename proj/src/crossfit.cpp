#include "playereval/crossfit.hpp"

#include <algorithm>
#include <future>
#include <random>

#include "playereval/error.hpp"
#include "playereval/stats.hpp"

namespace playereval {

FoldAssignment make_folds(const Eigen::VectorXi& players, int player_count, int folds,
                          std::uint64_t seed) {
  const Index n = players.size();
  if (folds < 2) fail(ErrorKind::InvalidArgument, "cross-fitting needs at least two folds");
  if (n < folds) fail(ErrorKind::InvalidArgument, "fewer records than folds");

  std::vector<std::vector<Index>> by_player(static_cast<std::size_t>(player_count));
  for (Index i = 0; i < n; ++i) {
    if (players[i] < 0 || players[i] >= player_count)
      fail(ErrorKind::InvalidArgument, "player index out of range");
    by_player[static_cast<std::size_t>(players[i])].push_back(i);
  }
  for (int a = 0; a < player_count; ++a) {
    // Round-robin dealing puts two or more records in distinct folds, which
    // keeps the player in every training set.
    if (by_player[static_cast<std::size_t>(a)].size() < 2)
      fail(ErrorKind::InsufficientPlayerData,
           "player " + std::to_string(a) + " has fewer than two records and would be absent from a training fold");
  }

  FoldAssignment out;
  out.fold_count = folds;
  out.fold_of.assign(static_cast<std::size_t>(n), 0);
  std::mt19937_64 rng(seed);
  Index counter = 0;
  for (auto& rows : by_player) {
    portable_shuffle(rows, rng);
    for (Index i : rows) out.fold_of[static_cast<std::size_t>(i)] = static_cast<int>(counter++ % folds);
  }
  out.training.resize(static_cast<std::size_t>(folds));
  out.validation.resize(static_cast<std::size_t>(folds));
  for (Index i = 0; i < n; ++i) {
    const int v = out.fold_of[static_cast<std::size_t>(i)];
    for (int j = 0; j < folds; ++j) (j == v ? out.validation : out.training)[static_cast<std::size_t>(j)].push_back(i);
  }
  return out;
}

int default_fold_count(Index n) { return n >= 5000 ? 10 : 5; }

FoldMarginals empirical_marginals(const Dataset& data, const std::vector<Index>& rows,
                                  const XCondition& x_condition) {
  const int m = data.player_count();
  FoldMarginals out;
  out.player = Eigen::VectorXd::Zero(m);
  out.player_and_x = Eigen::VectorXd::Zero(m);
  double admitted = 0.0;
  for (Index i : rows) {
    const int a = data.players()[i];
    out.player[a] += 1.0;
    if (x_condition.admits(data.covariates().row(i))) {
      admitted += 1.0;
      out.player_and_x[a] += 1.0;
    }
  }
  const double total = static_cast<double>(rows.size());
  out.player /= total;
  out.player_and_x /= total;
  out.x_condition = admitted / total;
  return out;
}

FoldMarginals empirical_marginals(const Dataset& data, const XCondition& x_condition) {
  std::vector<Index> rows(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) rows[static_cast<std::size_t>(i)] = i;
  return empirical_marginals(data, rows, x_condition);
}

Eigen::MatrixXd outcome_features(const Eigen::MatrixXd& x, const Eigen::VectorXi& players,
                                 int player_count) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols() + player_count - 1);
  out.leftCols(x.cols()) = x;
  for (Index i = 0; i < x.rows(); ++i) {
    if (players[i] > 0) out(i, x.cols() + players[i] - 1) = 1.0;
  }
  return out;
}

namespace {

struct FoldFit {
  Eigen::MatrixXd mu_valid;
  Eigen::VectorXd m_valid;
  Eigen::MatrixXd pi_valid;
  FoldMarginals marginals;
  FoldPredictions all_rows;
};

FoldFit fit_one_fold(const Dataset& data, const std::vector<Index>& train,
                     const std::vector<Index>& valid, const NuisanceLearners& learners,
                     const XCondition& x_condition, std::uint64_t seed) {
  const int m = data.player_count();
  const Eigen::MatrixXd& x = data.covariates();
  const Eigen::MatrixXd x_train = x(train, Eigen::all);
  const Eigen::VectorXi a_train = data.players()(train);
  const Eigen::VectorXi y_train = data.outcomes()(train);
  const Eigen::MatrixXd x_valid = x(valid, Eigen::all);
  const Index nv = x_valid.rows();

  const auto outcome = fit_super_learner(outcome_features(x_train, a_train, m), y_train,
                                         learners.outcome, learners.stack_folds, mix_seed(seed, 1));
  const auto marginal = fit_super_learner(x_train, y_train, learners.marginal_outcome,
                                          learners.stack_folds, mix_seed(seed, 2));
  const auto propensity = fit_propensity(x_train, a_train, m, learners.propensity,
                                         learners.stack_folds, mix_seed(seed, 3));

  FoldFit out;
  out.mu_valid.resize(nv, m);
  for (int a = 0; a < m; ++a) {
    const Eigen::VectorXi as = Eigen::VectorXi::Constant(nv, a);
    out.mu_valid.col(a) = outcome.predict(outcome_features(x_valid, as, m));
  }
  out.m_valid = marginal.predict(x_valid);
  out.pi_valid = propensity.predict(x_valid);
  out.marginals = empirical_marginals(data, train, x_condition);
  if (learners.keep_fold_predictions) {
    out.all_rows.mu_observed = outcome.predict(outcome_features(x, data.players(), m));
    out.all_rows.m_bar = marginal.predict(x);
    out.all_rows.pi = propensity.predict(x);
  }
  return out;
}

}  // namespace

NuisanceMatrices fit_nuisances(const Dataset& data, const FoldAssignment& folds,
                               const NuisanceLearners& learners, const XCondition& x_condition) {
  if (folds.size() != data.size())
    fail(ErrorKind::InvalidArgument, "fold assignment does not match the dataset");
  if (learners.outcome.empty() || learners.marginal_outcome.empty() || learners.propensity.empty())
    fail(ErrorKind::InvalidArgument, "every nuisance needs at least one candidate learner");
  const int m = data.player_count();
  const Index n = data.size();
  const auto J = static_cast<std::size_t>(folds.fold_count);

  std::vector<FoldFit> fits(J);
  auto run = [&](std::size_t j) {
    fits[j] = fit_one_fold(data, folds.training[j], folds.validation[j], learners, x_condition,
                           mix_seed(learners.seed, j));
  };
  if (learners.parallel) {
    std::vector<std::future<void>> pending;
    for (std::size_t j = 0; j < J; ++j) pending.push_back(std::async(std::launch::async, run, j));
    for (auto& p : pending) p.get();
  } else {
    for (std::size_t j = 0; j < J; ++j) run(j);
  }

  NuisanceMatrices out;
  out.mu.resize(n, m);
  out.m_bar.resize(n);
  out.pi.resize(n, m);
  out.x_condition = x_condition;
  for (std::size_t j = 0; j < J; ++j) {
    const auto& valid = folds.validation[j];
    for (std::size_t r = 0; r < valid.size(); ++r) {
      const Index i = valid[r];
      const auto ri = static_cast<Index>(r);
      out.mu.row(i) = fits[j].mu_valid.row(ri);
      out.m_bar[i] = fits[j].m_valid[ri];
      out.pi.row(i) = fits[j].pi_valid.row(ri);
    }
    out.fold_marginals.push_back(std::move(fits[j].marginals));
    if (learners.keep_fold_predictions) out.fold_predictions.push_back(std::move(fits[j].all_rows));
  }
  out.pooled_marginals = empirical_marginals(data, x_condition);
  return out;
}

}  // namespace playereval
