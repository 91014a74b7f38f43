#include "playereval/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "playereval/error.hpp"
#include "playereval/stats.hpp"

namespace playereval {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::EmptyConditioningSet: return "EmptyConditioningSet";
    case ErrorKind::EmptyData: return "EmptyData";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::DegeneratePlayer: return "DegeneratePlayer";
    case ErrorKind::InsufficientPlayerData: return "InsufficientPlayerData";
    case ErrorKind::FluctuationDiverged: return "FluctuationDiverged";
    case ErrorKind::DegenerateEif: return "DegenerateEif";
    case ErrorKind::DegenerateSe: return "DegenerateSe";
    case ErrorKind::NonDiscreteDgp: return "NonDiscreteDgp";
    case ErrorKind::InvalidDgp: return "InvalidDgp";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonBinaryOutcome: return "NonBinaryOutcome";
    case ErrorKind::UnparseableValue: return "UnparseableValue";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Config: return "Config";
  }
  return "Unknown";
}

Dataset::Dataset(Eigen::MatrixXd covariates, Eigen::VectorXi players, Eigen::VectorXi outcomes,
                 std::vector<std::string> player_labels,
                 std::vector<std::string> covariate_names)
    : covariates_(std::move(covariates)),
      players_(std::move(players)),
      outcomes_(std::move(outcomes)),
      player_labels_(std::move(player_labels)),
      covariate_names_(std::move(covariate_names)) {
  const Index n = covariates_.rows();
  if (n == 0) fail(ErrorKind::EmptyData, "dataset has no records");
  if (players_.size() != n || outcomes_.size() != n)
    fail(ErrorKind::InvalidArgument, "covariate, player and outcome lengths differ");
  if (player_labels_.size() < 2)
    fail(ErrorKind::InvalidArgument, "a dataset needs at least two players");
  if (covariate_names_.empty()) {
    for (Index k = 0; k < covariates_.cols(); ++k) covariate_names_.push_back("x" + std::to_string(k));
  }
  if (static_cast<Index>(covariate_names_.size()) != covariates_.cols())
    fail(ErrorKind::InvalidArgument, "covariate name count does not match dimension");
  const int m = player_count();
  for (Index i = 0; i < n; ++i) {
    if (outcomes_[i] != 0 && outcomes_[i] != 1)
      fail(ErrorKind::NonBinaryOutcome, "outcome at row " + std::to_string(i) + " is not 0/1");
    if (players_[i] < 0 || players_[i] >= m)
      fail(ErrorKind::InvalidArgument, "player index at row " + std::to_string(i) + " out of range");
  }
  if (!covariates_.allFinite()) fail(ErrorKind::NonFinite, "covariates contain non-finite values");
}

Dataset Dataset::from_records(std::span<const AttemptRecord> records,
                              std::vector<std::string> player_labels,
                              std::vector<std::string> covariate_names) {
  if (records.empty()) fail(ErrorKind::EmptyData, "dataset has no records");
  const Index n = static_cast<Index>(records.size());
  const Index p = records.front().x.size();
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXi a(n), y(n);
  for (Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    if (r.x.size() != p)
      fail(ErrorKind::InvalidArgument, "record " + std::to_string(i) + " has a different covariate dimension");
    x.row(i) = r.x.transpose();
    a[i] = r.player;
    y[i] = r.outcome;
  }
  return Dataset(std::move(x), std::move(a), std::move(y), std::move(player_labels),
                 std::move(covariate_names));
}

AttemptRecord Dataset::record(Index i) const {
  return {covariates_.row(i).transpose(), players_[i], outcomes_[i]};
}

Dataset Dataset::subset(std::span<const Index> rows) const {
  const Index k = static_cast<Index>(rows.size());
  Eigen::MatrixXd x(k, dimension());
  Eigen::VectorXi a(k), y(k);
  for (Index r = 0; r < k; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    x.row(r) = covariates_.row(i);
    a[r] = players_[i];
    y[r] = outcomes_[i];
  }
  return Dataset(std::move(x), std::move(a), std::move(y), player_labels_, covariate_names_);
}

Eigen::VectorXi Dataset::player_counts() const {
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(player_count());
  for (Index i = 0; i < size(); ++i) ++counts[players_[i]];
  return counts;
}

bool operator==(const Dataset& lhs, const Dataset& rhs) {
  return lhs.covariates_.rows() == rhs.covariates_.rows() &&
         lhs.covariates_.cols() == rhs.covariates_.cols() &&
         lhs.covariates_ == rhs.covariates_ && lhs.players_ == rhs.players_ &&
         lhs.outcomes_ == rhs.outcomes_ && lhs.player_labels_ == rhs.player_labels_ &&
         lhs.covariate_names_ == rhs.covariate_names_;
}

CovariateConstraint CovariateConstraint::equal_to(Index column, double value) {
  return {column, value, true, value, true};
}
CovariateConstraint CovariateConstraint::greater_than(Index column, double value) {
  return {column, value, false, std::nullopt, true};
}
CovariateConstraint CovariateConstraint::at_least(Index column, double value) {
  return {column, value, true, std::nullopt, true};
}
CovariateConstraint CovariateConstraint::less_than(Index column, double value) {
  return {column, std::nullopt, true, value, false};
}
CovariateConstraint CovariateConstraint::at_most(Index column, double value) {
  return {column, std::nullopt, true, value, true};
}

bool CovariateConstraint::admits(double value) const {
  if (lower) {
    if (lower_inclusive ? value < *lower : value <= *lower) return false;
  }
  if (upper) {
    if (upper_inclusive ? value > *upper : value >= *upper) return false;
  }
  return true;
}

bool XCondition::admits(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  return std::all_of(constraints.begin(), constraints.end(), [&](const CovariateConstraint& c) {
    if (c.column < 0 || c.column >= x.size())
      fail(ErrorKind::InvalidArgument, "covariate constraint column out of range");
    return c.admits(x[c.column]);
  });
}

Eigen::ArrayXd XCondition::indicator(const Dataset& data) const {
  Eigen::ArrayXd w(data.size());
  for (Index i = 0; i < data.size(); ++i) w[i] = admits(data.covariates().row(i)) ? 1.0 : 0.0;
  return w;
}

std::string_view to_string(EstimandKind kind) {
  switch (kind) {
    case EstimandKind::Direct: return "direct";
    case EstimandKind::Indirect: return "indirect";
    case EstimandKind::RandomReplacement: return "rand";
  }
  return "unknown";
}

EstimandKind parse_estimand_kind(std::string_view text) {
  if (text == "direct") return EstimandKind::Direct;
  if (text == "indirect") return EstimandKind::Indirect;
  if (text == "rand" || text == "random_replacement") return EstimandKind::RandomReplacement;
  fail(ErrorKind::Config, "unknown estimand '" + std::string(text) + "'");
}

std::vector<int> EstimandSpec::player_condition(int player_count) const {
  if (player_subset) {
    std::set<int> unique(player_subset->begin(), player_subset->end());
    for (int a : unique) {
      if (a < 0 || a >= player_count) fail(ErrorKind::InvalidArgument, "player subset index out of range");
    }
    return {unique.begin(), unique.end()};
  }
  if (kind == EstimandKind::Direct) {
    std::vector<int> all(static_cast<std::size_t>(player_count));
    for (int a = 0; a < player_count; ++a) all[static_cast<std::size_t>(a)] = a;
    return all;
  }
  return {focal_player};
}

std::vector<bool> player_mask(const EstimandSpec& spec, int player_count) {
  std::vector<bool> mask(static_cast<std::size_t>(player_count), false);
  for (int a : spec.player_condition(player_count)) mask[static_cast<std::size_t>(a)] = true;
  return mask;
}

InterventionDistribution InterventionDistribution::for_estimand(const EstimandSpec& spec) {
  switch (spec.kind) {
    case EstimandKind::Direct: return {Kind::Degenerate, spec.focal_player};
    case EstimandKind::Indirect: return {Kind::Observational, spec.focal_player};
    case EstimandKind::RandomReplacement: return {Kind::Uniform, spec.focal_player};
  }
  return {};
}

Eigen::VectorXd InterventionDistribution::probabilities(
    const Eigen::Ref<const Eigen::VectorXd>& propensity_row) const {
  const Index m = propensity_row.size();
  switch (kind) {
    case Kind::Degenerate: {
      Eigen::VectorXd p = Eigen::VectorXd::Zero(m);
      p[player] = 1.0;
      return p;
    }
    case Kind::Observational:
      return propensity_row / propensity_row.sum();
    case Kind::Uniform:
      return Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  }
  return {};
}

double empirical_success_rate(const Dataset& data, int player, const XCondition& x_condition) {
  EstimandSpec spec{EstimandKind::Indirect, player, x_condition, std::nullopt};
  return empirical_success_rate(data, spec);
}

double empirical_success_rate(const Dataset& data, const EstimandSpec& spec) {
  const auto rows = conditioning_indices(data, spec);
  Eigen::ArrayXd y(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) y[static_cast<Index>(r)] = data.outcomes()[rows[r]];
  return stable_mean(y);
}

std::vector<Index> conditioning_indices(const Dataset& data, const EstimandSpec& spec) {
  const auto mask = player_mask(spec, data.player_count());
  std::vector<Index> rows;
  for (Index i = 0; i < data.size(); ++i) {
    if (mask[static_cast<std::size_t>(data.players()[i])] &&
        spec.x_condition.admits(data.covariates().row(i)))
      rows.push_back(i);
  }
  if (rows.empty())
    fail(ErrorKind::EmptyConditioningSet,
         "no attempts satisfy the conditioning sets for player " + std::to_string(spec.focal_player));
  return rows;
}

}  // namespace playereval
