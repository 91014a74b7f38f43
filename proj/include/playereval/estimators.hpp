#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "playereval/core.hpp"
#include "playereval/crossfit.hpp"

namespace playereval {

enum class EstimatorKind { Substitution, OneStep, Tmle };

std::string_view to_string(EstimatorKind kind);
EstimatorKind parse_estimator_kind(std::string_view text);

enum ResultFlag : unsigned {
  kFlagNone = 0,
  kFlagOutsideUnitInterval = 1u << 0,
  kFlagTargetingIncomplete = 1u << 1,
  kFlagDegenerateEif = 1u << 2,
  kFlagSmallSample = 1u << 3,
};

std::vector<std::string> flag_names(unsigned flags);

struct EstimatorOptions {
  /// Solve each fluctuation on pooled out-of-sample predictions (exactly
  /// solves the EIF equation). When false, epsilon is fit per fold on that
  /// fold's training rows and applied to its validation rows, and fold-wise
  /// marginals are used throughout.
  bool epsilon_pool = true;
  double level = 0.95;
};

using Interval = std::pair<double, double>;

struct EstimateResult {
  double psi = 0.0;
  /// Per-record EIF values (empty for substitution).
  Eigen::VectorXd eif;
  /// sqrt(mean(eif^2) / n); NaN for substitution.
  double se = 0.0;
  Interval ci{0.0, 0.0};
  double level = 0.95;
  EstimatorKind estimator = EstimatorKind::Substitution;
  EstimandSpec spec;
  unsigned flags = kFlagNone;
  /// TMLE fluctuation parameters, one per fluctuated column (and per fold in
  /// train-fold mode).
  std::vector<double> epsilons;

  double eif_mean() const;
  bool has(ResultFlag flag) const { return (flags & flag) != 0; }
};

struct ContrastResult {
  double delta = 0.0;
  double se = 0.0;
  Interval ci{0.0, 0.0};
  EstimandKind kind = EstimandKind::Indirect;
  double empirical_rate = 0.0;
  Index conditioning_size = 0;
  Eigen::VectorXd eif;
  unsigned flags = kFlagNone;
  EstimateResult parameter;
};

/// Contrasts with fewer conditioning records than this carry kFlagSmallSample.
inline constexpr Index kSmallSampleThreshold = 30;

EstimateResult estimate_substitution(const Dataset& data, const EstimandSpec& spec,
                                     const NuisanceMatrices& nuisances,
                                     const EstimatorOptions& options = {},
                                     const FoldAssignment* folds = nullptr);

/// EIF of `spec` at the supplied nuisances, centred at `psi`. Fold-wise
/// marginals (through each record's validation fold) are used when
/// `options.epsilon_pool` is false, which then requires `folds`.
Eigen::VectorXd compute_eif(const Dataset& data, const EstimandSpec& spec,
                            const NuisanceMatrices& nuisances, double psi,
                            const EstimatorOptions& options = {},
                            const FoldAssignment* folds = nullptr);

EstimateResult estimate_onestep(const Dataset& data, const EstimandSpec& spec,
                                const NuisanceMatrices& nuisances,
                                const EstimatorOptions& options = {},
                                const FoldAssignment* folds = nullptr);

EstimateResult estimate_tmle(const Dataset& data, const EstimandSpec& spec,
                             const NuisanceMatrices& nuisances, const FoldAssignment& folds,
                             const EstimatorOptions& options = {});

EstimateResult estimate(EstimatorKind estimator, const Dataset& data, const EstimandSpec& spec,
                        const NuisanceMatrices& nuisances, const FoldAssignment& folds,
                        const EstimatorOptions& options = {});

/// psi +/- z_{(1+level)/2} * sd(eif) / sqrt(n), sd with divisor n.
Interval wald_ci(double psi, const Eigen::VectorXd& eif, Index n, double level);

/// Empirical success rate minus the TMLE estimate, with inference from the
/// difference of the two EIFs.
ContrastResult estimate_contrast(const Dataset& data, const EstimandSpec& spec,
                                 const NuisanceMatrices& nuisances, const FoldAssignment& folds,
                                 const EstimatorOptions& options = {});

/// Minimiser of the offset-logistic loss in a scalar epsilon along
/// `covariate`. Newton (tolerance 1e-10, 50 iterations) with bisection on
/// [-10, 10] as fallback; throws FluctuationDiverged when |epsilon| > 10.
double solve_fluctuation(const Eigen::VectorXd& offset, const Eigen::VectorXd& covariate,
                         const Eigen::VectorXd& outcome);

}  // namespace playereval
