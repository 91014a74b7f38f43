#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "playereval/core.hpp"

namespace playereval {

enum class LearnerKind { Mean, Logistic, BoostedStumps };

/// One candidate in a learner library.
struct LearnerConfig {
  LearnerKind kind = LearnerKind::Logistic;
  double ridge = 1e-6;
  /// Logistic only: append all pairwise products of the input columns.
  bool interactions = false;
  int rounds = 100;
  double shrinkage = 0.1;

  std::string name() const;
  friend bool operator==(const LearnerConfig&, const LearnerConfig&) = default;
};

/// Depth-one tree: rows with x[feature] <= threshold take `left`.
/// feature < 0 marks an unsplit (constant) update.
struct Stump {
  Index feature = -1;
  double threshold = 0.0;
  double left = 0.0;
  double right = 0.0;
};

class BinaryLearnerModel {
 public:
  struct MeanFit {
    double rate = 0.5;
  };
  struct LogisticFit {
    double intercept = 0.0;
    /// Raw-scale coefficients over the (possibly expanded) feature columns.
    Eigen::VectorXd coefficients;
    bool interactions = false;
    int iterations = 0;
    /// Max |penalised score| at the returned coefficients, in the internal
    /// standardised parameterisation.
    double max_abs_score = 0.0;
  };
  struct StumpsFit {
    double base = 0.0;
    double shrinkage = 0.1;
    std::vector<Stump> stumps;
    /// Training log loss after each round.
    std::vector<double> loss_trace;
  };
  using Parameters = std::variant<MeanFit, LogisticFit, StumpsFit>;

  explicit BinaryLearnerModel(Parameters parameters) : parameters_(std::move(parameters)) {}

  LearnerKind kind() const;
  const Parameters& parameters() const { return parameters_; }

  /// Logit-scale score without offset or clipping.
  Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x) const;
  /// Probabilities clipped to [1e-6, 1 - 1e-6].
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x, const Eigen::VectorXd& offset) const;

 private:
  Parameters parameters_;
};

/// Original columns followed by x_j * x_k for j < k.
Eigen::MatrixXd expand_interactions(const Eigen::MatrixXd& x);

double log_loss(const Eigen::VectorXi& y, const Eigen::VectorXd& p);

BinaryLearnerModel fit_mean(const Eigen::VectorXi& targets);

struct LogisticOptions {
  double ridge = 1e-6;
  bool interactions = false;
  bool intercept = true;
  std::optional<Eigen::VectorXd> offset;
  int max_iterations = 100;
  double tolerance = 1e-9;
};

/// Ridge-penalised logistic regression by IRLS on internally standardised
/// columns. The intercept is unpenalised; zero-variance columns get a zero
/// coefficient.
BinaryLearnerModel fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXi& targets,
                                const LogisticOptions& options = {});

/// Gradient boosting of depth-one trees on logistic loss with Newton leaf
/// values. Deterministic.
BinaryLearnerModel fit_boosted_stumps(const Eigen::MatrixXd& features, const Eigen::VectorXi& targets,
                                      int rounds, double shrinkage);

BinaryLearnerModel fit_learner(const LearnerConfig& config, const Eigen::MatrixXd& features,
                               const Eigen::VectorXi& targets);

/// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v);

struct SuperLearnerModel {
  std::vector<LearnerConfig> configs;
  std::vector<BinaryLearnerModel> candidates;
  Eigen::VectorXd weights;
  /// Per-candidate cross-validated log loss (empty for a single candidate).
  Eigen::VectorXd cv_log_loss;
  double ensemble_cv_log_loss = 0.0;
  /// Out-of-fold candidate predictions used for stacking (n x candidates).
  Eigen::MatrixXd cv_predictions;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

SuperLearnerModel fit_super_learner(const Eigen::MatrixXd& features, const Eigen::VectorXi& targets,
                                    const std::vector<LearnerConfig>& candidates, int folds,
                                    std::uint64_t seed = 0);

/// Meta-weights minimising Bernoulli log loss of `cv_predictions * w` over the
/// simplex: projected gradient, 500 iterations, step 0.1, tolerance 1e-9,
/// then compared against every vertex.
Eigen::VectorXd stack_weights(const Eigen::MatrixXd& cv_predictions, const Eigen::VectorXi& targets);

/// One-vs-rest Super Learners, normalised per row.
class PropensityModel {
 public:
  explicit PropensityModel(std::vector<SuperLearnerModel> per_player)
      : per_player_(std::move(per_player)) {}

  int player_count() const { return static_cast<int>(per_player_.size()); }
  const std::vector<SuperLearnerModel>& per_player() const { return per_player_; }

  /// n x m matrix; rows are positive and sum to one.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const;

 private:
  std::vector<SuperLearnerModel> per_player_;
};

/// Normalise raw one-vs-rest scores per row, floor at 1e-6, renormalise.
Eigen::MatrixXd normalize_propensity_rows(Eigen::MatrixXd raw);

PropensityModel fit_propensity(const Eigen::MatrixXd& features, const Eigen::VectorXi& players,
                               int player_count, const std::vector<LearnerConfig>& candidates,
                               int folds, std::uint64_t seed = 0);

}  // namespace playereval
