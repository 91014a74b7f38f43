#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace playereval {

using Index = Eigen::Index;

/// One attempt: encoded covariates, 0-based player index, binary outcome.
struct AttemptRecord {
  Eigen::VectorXd x;
  int player = 0;
  int outcome = 0;
};

/// Immutable attempt table. Covariates are stored row-per-attempt.
class Dataset {
 public:
  Dataset(Eigen::MatrixXd covariates, Eigen::VectorXi players, Eigen::VectorXi outcomes,
          std::vector<std::string> player_labels, std::vector<std::string> covariate_names);

  static Dataset from_records(std::span<const AttemptRecord> records,
                              std::vector<std::string> player_labels,
                              std::vector<std::string> covariate_names);

  Index size() const { return covariates_.rows(); }
  Index dimension() const { return covariates_.cols(); }
  int player_count() const { return static_cast<int>(player_labels_.size()); }

  const Eigen::MatrixXd& covariates() const { return covariates_; }
  const Eigen::VectorXi& players() const { return players_; }
  const Eigen::VectorXi& outcomes() const { return outcomes_; }
  const std::vector<std::string>& player_labels() const { return player_labels_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  AttemptRecord record(Index i) const;
  /// Rows restricted to `rows`, preserving player indexing and labels.
  Dataset subset(std::span<const Index> rows) const;
  /// Attempt counts per player.
  Eigen::VectorXi player_counts() const;

  friend bool operator==(const Dataset&, const Dataset&);

 private:
  Eigen::MatrixXd covariates_;
  Eigen::VectorXi players_;
  Eigen::VectorXi outcomes_;
  std::vector<std::string> player_labels_;
  std::vector<std::string> covariate_names_;
};

/// Interval or equality restriction on one covariate column.
struct CovariateConstraint {
  Index column = 0;
  std::optional<double> lower;
  bool lower_inclusive = true;
  std::optional<double> upper;
  bool upper_inclusive = true;

  static CovariateConstraint equal_to(Index column, double value);
  static CovariateConstraint greater_than(Index column, double value);
  static CovariateConstraint at_least(Index column, double value);
  static CovariateConstraint less_than(Index column, double value);
  static CovariateConstraint at_most(Index column, double value);

  bool admits(double value) const;
  friend bool operator==(const CovariateConstraint&, const CovariateConstraint&) = default;
};

/// Covariate subset X' as a conjunction of per-column constraints. An empty
/// conjunction admits every covariate vector.
struct XCondition {
  std::vector<CovariateConstraint> constraints;

  bool always_true() const { return constraints.empty(); }
  bool admits(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  /// Indicator vector over the rows of `data`.
  Eigen::ArrayXd indicator(const Dataset& data) const;

  friend bool operator==(const XCondition&, const XCondition&) = default;
};

enum class EstimandKind { Direct, Indirect, RandomReplacement };

std::string_view to_string(EstimandKind kind);
EstimandKind parse_estimand_kind(std::string_view text);

struct EstimandSpec {
  EstimandKind kind = EstimandKind::Direct;
  int focal_player = 0;
  XCondition x_condition;
  /// Overrides the derived player condition A'. Unset: Direct uses every
  /// player, the other kinds use {focal_player}.
  std::optional<std::vector<int>> player_subset;

  /// Sorted player set A' for a dataset with `player_count` players.
  std::vector<int> player_condition(int player_count) const;
};

/// Reassignment rule A* | X.
struct InterventionDistribution {
  enum class Kind { Degenerate, Observational, Uniform };
  Kind kind = Kind::Uniform;
  int player = 0;

  static InterventionDistribution for_estimand(const EstimandSpec& spec);

  /// P(A* = . | X) given the observed propensity row pi(. | X).
  Eigen::VectorXd probabilities(const Eigen::Ref<const Eigen::VectorXd>& propensity_row) const;
};

/// Mean outcome over attempts by `player` admitted by `x_condition`.
double empirical_success_rate(const Dataset& data, int player, const XCondition& x_condition);

/// Mean outcome over the conditioning set of `spec`.
double empirical_success_rate(const Dataset& data, const EstimandSpec& spec);

/// Row indices with X in X' and A in A', in dataset order.
std::vector<Index> conditioning_indices(const Dataset& data, const EstimandSpec& spec);

/// Membership mask over players for A'.
std::vector<bool> player_mask(const EstimandSpec& spec, int player_count);

}  // namespace playereval
