#include "playereval/estimators.hpp"

#include <cmath>
#include <limits>

#include "playereval/error.hpp"
#include "playereval/stats.hpp"

namespace playereval {

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Substitution: return "substitution";
    case EstimatorKind::OneStep: return "onestep";
    case EstimatorKind::Tmle: return "tmle";
  }
  return "unknown";
}

EstimatorKind parse_estimator_kind(std::string_view text) {
  if (text == "substitution" || text == "plugin") return EstimatorKind::Substitution;
  if (text == "onestep" || text == "one-step") return EstimatorKind::OneStep;
  if (text == "tmle") return EstimatorKind::Tmle;
  fail(ErrorKind::Config, "unknown estimator '" + std::string(text) + "'");
}

std::vector<std::string> flag_names(unsigned flags) {
  std::vector<std::string> out;
  if (flags & kFlagOutsideUnitInterval) out.emplace_back("OutsideUnitInterval");
  if (flags & kFlagTargetingIncomplete) out.emplace_back("TargetingIncomplete");
  if (flags & kFlagDegenerateEif) out.emplace_back("DegenerateEif");
  if (flags & kFlagSmallSample) out.emplace_back("SmallSample");
  return out;
}

double EstimateResult::eif_mean() const {
  return eif.size() == 0 ? std::numeric_limits<double>::quiet_NaN() : eif.mean();
}

namespace {

constexpr double kTargetingTolerance = 1e-6;

// Per-record quantities shared by every estimator for one spec.
struct Context {
  Index n = 0;
  int m = 0;
  EstimandKind kind = EstimandKind::Direct;
  int focal = 0;
  std::vector<bool> in_s;
  Eigen::ArrayXd w;
  /// Records in the conditioning set (w = 1 and A in A').
  Eigen::ArrayXd in_c;
  /// Normaliser P(A in A', X in X') seen by record i.
  Eigen::ArrayXd q;
  /// g(a') weights on mu for the mu-based kinds.
  Eigen::VectorXd g;
  Eigen::ArrayXd y;
};

double set_mass(const FoldMarginals& marg, const std::vector<bool>& in_s) {
  double total = 0.0;
  for (std::size_t b = 0; b < in_s.size(); ++b)
    if (in_s[b]) total += marg.player_and_x[static_cast<Index>(b)];
  return total;
}

Context make_context(const Dataset& data, const EstimandSpec& spec, const NuisanceMatrices& nu,
                     bool pooled, const FoldAssignment* folds) {
  Context c;
  c.n = data.size();
  c.m = data.player_count();
  if (nu.size() != c.n || nu.player_count() != c.m)
    fail(ErrorKind::InvalidArgument, "nuisances do not match the dataset");
  if (spec.focal_player < 0 || spec.focal_player >= c.m)
    fail(ErrorKind::InvalidArgument, "focal player out of range");
  c.kind = spec.kind;
  c.focal = spec.focal_player;
  c.in_s = player_mask(spec, c.m);
  c.w = spec.x_condition.indicator(data);
  c.y = data.outcomes().cast<double>().array();
  c.in_c = Eigen::ArrayXd::Zero(c.n);
  for (Index i = 0; i < c.n; ++i)
    if (c.w[i] > 0.0 && c.in_s[static_cast<std::size_t>(data.players()[i])]) c.in_c[i] = 1.0;
  if (c.in_c.sum() == 0.0) fail(ErrorKind::EmptyConditioningSet, "no records satisfy the estimand conditions");

  c.q.resize(c.n);
  if (pooled) {
    c.q.setConstant(set_mass(empirical_marginals(data, spec.x_condition), c.in_s));
  } else {
    if (folds == nullptr || folds->size() != c.n)
      fail(ErrorKind::InvalidArgument, "fold-wise marginals need the fold assignment");
    std::vector<FoldMarginals> per_fold;
    for (int j = 0; j < folds->fold_count; ++j)
      per_fold.push_back(empirical_marginals(data, folds->training[static_cast<std::size_t>(j)], spec.x_condition));
    for (Index i = 0; i < c.n; ++i)
      c.q[i] = set_mass(per_fold[static_cast<std::size_t>(folds->fold_of[static_cast<std::size_t>(i)])], c.in_s);
  }
  if ((c.q <= 0.0).any()) fail(ErrorKind::EmptyConditioningSet, "a fold has no records in the conditioning set");

  c.g = Eigen::VectorXd::Zero(c.m);
  if (c.kind == EstimandKind::Direct)
    c.g[c.focal] = 1.0;
  else if (c.kind == EstimandKind::RandomReplacement)
    c.g.setConstant(1.0 / c.m);
  return c;
}

double pi_set(const Context& c, const Eigen::MatrixXd& pi, Index i) {
  double s = 0.0;
  for (int b = 0; b < c.m; ++b)
    if (c.in_s[static_cast<std::size_t>(b)]) s += pi(i, b);
  return s;
}

double substitution_value(const Context& c, const Eigen::MatrixXd& mu, const Eigen::VectorXd& m_bar) {
  const Eigen::ArrayXd f = c.kind == EstimandKind::Indirect ? Eigen::VectorXd(m_bar) : Eigen::VectorXd(mu * c.g);
  return (f * c.in_c).sum() / c.in_c.sum();
}

Eigen::VectorXd eif_values(const Context& c, const Dataset& data, const Eigen::MatrixXd& mu,
                           const Eigen::VectorXd& m_bar, const Eigen::MatrixXd& pi, double psi) {
  Eigen::VectorXd d(c.n);
  for (Index i = 0; i < c.n; ++i) {
    if (c.w[i] == 0.0) {
      d[i] = 0.0;
      continue;
    }
    const int a = data.players()[i];
    const double s = pi_set(c, pi, i);
    const double member = c.in_s[static_cast<std::size_t>(a)] ? 1.0 : 0.0;
    double value = 0.0;
    if (c.kind == EstimandKind::Indirect) {
      value = s * (c.y[i] - m_bar[i]) + member * (m_bar[i] - psi);
    } else {
      const double f = mu.row(i).dot(c.g);
      value = c.g[a] * s / pi(i, a) * (c.y[i] - mu(i, a)) + member * (f - psi);
    }
    d[i] = value / c.q[i];
  }
  if (!d.allFinite()) fail(ErrorKind::NonFinite, "EIF weights overflowed");
  return d;
}

double root_mean_square_se(const Eigen::VectorXd& eif) {
  return std::sqrt(eif.squaredNorm() / static_cast<double>(eif.size())) /
         std::sqrt(static_cast<double>(eif.size()));
}

void finish_inference(EstimateResult& r) {
  r.se = root_mean_square_se(r.eif);
  const double centered = (r.eif.array() - r.eif.mean()).matrix().squaredNorm();
  if (!(centered > 0.0)) {
    r.flags |= kFlagDegenerateEif;
    r.ci = {r.psi, r.psi};
  } else {
    r.ci = wald_ci(r.psi, r.eif, r.eif.size(), r.level);
  }
  if (r.psi < 0.0 || r.psi > 1.0) r.flags |= kFlagOutsideUnitInterval;
}

double score(const Eigen::VectorXd& offset, const Eigen::VectorXd& h, const Eigen::VectorXd& y, double eps,
             double* information) {
  double u = 0.0, info = 0.0;
  for (Index i = 0; i < h.size(); ++i) {
    const double p = expit(offset[i] + eps * h[i]);
    u += h[i] * (y[i] - p);
    info += h[i] * h[i] * p * (1.0 - p);
  }
  if (information != nullptr) *information = info;
  return u;
}

// Training rows (A = a' in the mu-based kinds) with their clever covariate.
struct FluctuationRows {
  std::vector<double> offset, h, y;
  void push(double o, double hv, double yv) {
    offset.push_back(o);
    h.push_back(hv);
    y.push_back(yv);
  }
  double solve() const {
    if (h.empty()) return 0.0;
    const auto n = static_cast<Index>(h.size());
    return solve_fluctuation(Eigen::Map<const Eigen::VectorXd>(offset.data(), n),
                             Eigen::Map<const Eigen::VectorXd>(h.data(), n),
                             Eigen::Map<const Eigen::VectorXd>(y.data(), n));
  }
};

double logit_clipped(double p) { return logit(clip_probability(p)); }

}  // namespace

double solve_fluctuation(const Eigen::VectorXd& offset, const Eigen::VectorXd& covariate,
                         const Eigen::VectorXd& outcome) {
  constexpr double kLimit = 10.0;
  if (covariate.size() == 0 || covariate.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  double eps = 0.0;
  bool converged = false;
  for (int iter = 0; iter < 50; ++iter) {
    double info = 0.0;
    const double u = score(offset, covariate, outcome, eps, &info);
    if (!(info > 0.0) || !std::isfinite(u)) break;
    const double step = u / info;
    eps += step;
    if (!std::isfinite(eps) || std::abs(eps) > 2 * kLimit) break;
    if (std::abs(step) <= 1e-10 * (1.0 + std::abs(eps))) {
      converged = true;
      break;
    }
  }
  if (converged && std::abs(eps) <= kLimit) return eps;

  // The score is non-increasing in epsilon, so a root in the window exists
  // exactly when the endpoint scores straddle zero.
  double lo = -kLimit, hi = kLimit;
  const double u_lo = score(offset, covariate, outcome, lo, nullptr);
  const double u_hi = score(offset, covariate, outcome, hi, nullptr);
  if (u_lo < 0.0 || u_hi > 0.0)
    fail(ErrorKind::FluctuationDiverged, "fluctuation parameter exceeds 10 in magnitude");
  for (int iter = 0; iter < 200 && hi - lo > 1e-15; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (score(offset, covariate, outcome, mid, nullptr) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Interval wald_ci(double psi, const Eigen::VectorXd& eif, Index n, double level) {
  if (n < 2) fail(ErrorKind::InvalidArgument, "Wald interval needs at least two records");
  if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::InvalidArgument, "level must lie in (0, 1)");
  if (eif.size() == 0) fail(ErrorKind::InvalidArgument, "empty EIF");
  const double mean = eif.mean();
  const double sd = std::sqrt((eif.array() - mean).square().sum() / static_cast<double>(eif.size()));
  if (!(sd > 0.0)) fail(ErrorKind::DegenerateEif, "EIF has zero spread");
  const double half = two_sided_z(level) * sd / std::sqrt(static_cast<double>(n));
  return {psi - half, psi + half};
}

EstimateResult estimate_substitution(const Dataset& data, const EstimandSpec& spec,
                                     const NuisanceMatrices& nuisances, const EstimatorOptions& options,
                                     const FoldAssignment* folds) {
  const Context c = make_context(data, spec, nuisances, options.epsilon_pool || folds == nullptr, folds);
  EstimateResult r;
  r.psi = substitution_value(c, nuisances.mu, nuisances.m_bar);
  r.se = std::numeric_limits<double>::quiet_NaN();
  r.ci = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  r.level = options.level;
  r.estimator = EstimatorKind::Substitution;
  r.spec = spec;
  if (r.psi < 0.0 || r.psi > 1.0) r.flags |= kFlagOutsideUnitInterval;
  return r;
}

Eigen::VectorXd compute_eif(const Dataset& data, const EstimandSpec& spec, const NuisanceMatrices& nuisances,
                            double psi, const EstimatorOptions& options, const FoldAssignment* folds) {
  if (!std::isfinite(psi)) fail(ErrorKind::InvalidArgument, "psi must be finite");
  const Context c = make_context(data, spec, nuisances, options.epsilon_pool, folds);
  return eif_values(c, data, nuisances.mu, nuisances.m_bar, nuisances.pi, psi);
}

EstimateResult estimate_onestep(const Dataset& data, const EstimandSpec& spec,
                                const NuisanceMatrices& nuisances, const EstimatorOptions& options,
                                const FoldAssignment* folds) {
  const Context c = make_context(data, spec, nuisances, options.epsilon_pool, folds);
  const double plug_in = substitution_value(c, nuisances.mu, nuisances.m_bar);
  const Eigen::VectorXd at_plug_in = eif_values(c, data, nuisances.mu, nuisances.m_bar, nuisances.pi, plug_in);
  EstimateResult r;
  r.psi = plug_in + at_plug_in.mean();
  r.eif = eif_values(c, data, nuisances.mu, nuisances.m_bar, nuisances.pi, r.psi);
  r.level = options.level;
  r.estimator = EstimatorKind::OneStep;
  r.spec = spec;
  finish_inference(r);
  return r;
}

EstimateResult estimate_tmle(const Dataset& data, const EstimandSpec& spec, const NuisanceMatrices& nuisances,
                             const FoldAssignment& folds, const EstimatorOptions& options) {
  if (folds.size() != data.size()) fail(ErrorKind::InvalidArgument, "fold assignment does not match the dataset");
  const bool pooled = options.epsilon_pool;
  const Context c = make_context(data, spec, nuisances, pooled, &folds);
  if (!pooled && static_cast<int>(nuisances.fold_predictions.size()) != folds.fold_count)
    fail(ErrorKind::InvalidArgument, "train-fold fluctuation needs per-fold predictions");

  const auto J = static_cast<std::size_t>(folds.fold_count);
  // Per-fold training normalisers for the train-fold fit.
  std::vector<double> q_train(J, 0.0);
  if (!pooled) {
    for (std::size_t j = 0; j < J; ++j) {
      q_train[j] = set_mass(empirical_marginals(data, folds.training[j], spec.x_condition), c.in_s);
      if (!(q_train[j] > 0.0)) fail(ErrorKind::EmptyConditioningSet, "a training fold has no conditioning records");
    }
  }

  Eigen::MatrixXd mu = nuisances.mu;
  Eigen::VectorXd m_bar = nuisances.m_bar;
  const Eigen::MatrixXd& pi = nuisances.pi;
  const Eigen::VectorXi& players = data.players();
  EstimateResult r;

  // Clever covariate for one record given its propensity row and normaliser.
  auto clever = [&](const Eigen::MatrixXd& pi_rows, Index row, Index i, double q, int column) {
    if (c.w[i] == 0.0) return 0.0;
    double s = 0.0;
    for (int b = 0; b < c.m; ++b)
      if (c.in_s[static_cast<std::size_t>(b)]) s += pi_rows(row, b);
    if (c.kind == EstimandKind::Indirect) return s / q;
    return s / (q * pi_rows(row, column));
  };

  if (c.kind == EstimandKind::Indirect) {
    if (pooled) {
      FluctuationRows rows;
      for (Index i = 0; i < c.n; ++i)
        rows.push(logit_clipped(m_bar[i]), clever(pi, i, i, c.q[i], 0), c.y[i]);
      const double eps = rows.solve();
      r.epsilons.push_back(eps);
      for (Index i = 0; i < c.n; ++i) m_bar[i] = expit(logit_clipped(m_bar[i]) + eps * rows.h[static_cast<std::size_t>(i)]);
    } else {
      for (std::size_t j = 0; j < J; ++j) {
        const FoldPredictions& fp = nuisances.fold_predictions[j];
        FluctuationRows rows;
        for (Index i : folds.training[j]) rows.push(logit_clipped(fp.m_bar[i]), clever(fp.pi, i, i, q_train[j], 0), c.y[i]);
        const double eps = rows.solve();
        r.epsilons.push_back(eps);
        for (Index i : folds.validation[j])
          m_bar[i] = expit(logit_clipped(nuisances.m_bar[i]) + eps * clever(pi, i, i, c.q[i], 0));
      }
    }
  } else {
    for (int col = 0; col < c.m; ++col) {
      if (c.g[col] == 0.0) continue;
      if (pooled) {
        FluctuationRows rows;
        for (Index i = 0; i < c.n; ++i)
          if (players[i] == col) rows.push(logit_clipped(mu(i, col)), clever(pi, i, i, c.q[i], col), c.y[i]);
        const double eps = rows.solve();
        r.epsilons.push_back(eps);
        for (Index i = 0; i < c.n; ++i)
          mu(i, col) = expit(logit_clipped(nuisances.mu(i, col)) + eps * clever(pi, i, i, c.q[i], col));
      } else {
        for (std::size_t j = 0; j < J; ++j) {
          const FoldPredictions& fp = nuisances.fold_predictions[j];
          FluctuationRows rows;
          for (Index i : folds.training[j])
            if (players[i] == col)
              rows.push(logit_clipped(fp.mu_observed[i]), clever(fp.pi, i, i, q_train[j], col), c.y[i]);
          const double eps = rows.solve();
          r.epsilons.push_back(eps);
          for (Index i : folds.validation[j])
            mu(i, col) = expit(logit_clipped(nuisances.mu(i, col)) + eps * clever(pi, i, i, c.q[i], col));
        }
      }
    }
  }

  r.psi = substitution_value(c, mu, m_bar);
  r.eif = eif_values(c, data, mu, m_bar, pi, r.psi);
  r.level = options.level;
  r.estimator = EstimatorKind::Tmle;
  r.spec = spec;
  finish_inference(r);
  if (std::abs(r.eif.mean()) > kTargetingTolerance) r.flags |= kFlagTargetingIncomplete;
  return r;
}

EstimateResult estimate(EstimatorKind estimator, const Dataset& data, const EstimandSpec& spec,
                        const NuisanceMatrices& nuisances, const FoldAssignment& folds,
                        const EstimatorOptions& options) {
  switch (estimator) {
    case EstimatorKind::Substitution: return estimate_substitution(data, spec, nuisances, options, &folds);
    case EstimatorKind::OneStep: return estimate_onestep(data, spec, nuisances, options, &folds);
    case EstimatorKind::Tmle: return estimate_tmle(data, spec, nuisances, folds, options);
  }
  fail(ErrorKind::InvalidArgument, "unknown estimator");
}

ContrastResult estimate_contrast(const Dataset& data, const EstimandSpec& spec, const NuisanceMatrices& nuisances,
                                 const FoldAssignment& folds, const EstimatorOptions& options) {
  if (spec.kind == EstimandKind::Direct)
    fail(ErrorKind::InvalidArgument, "contrasts are defined for the indirect and random-replacement estimands");
  const Context c = make_context(data, spec, nuisances, options.epsilon_pool, &folds);
  ContrastResult out;
  out.kind = spec.kind;
  out.parameter = estimate_tmle(data, spec, nuisances, folds, options);
  const double members = c.in_c.sum();
  out.conditioning_size = static_cast<Index>(members);
  out.empirical_rate = (c.y * c.in_c).sum() / members;
  out.delta = out.empirical_rate - out.parameter.psi;
  out.eif = ((c.in_c / c.q) * (c.y - out.empirical_rate)).matrix() - out.parameter.eif;
  out.se = root_mean_square_se(out.eif);
  const double centered = (out.eif.array() - out.eif.mean()).matrix().squaredNorm();
  if (!(centered > 0.0)) {
    out.flags |= kFlagDegenerateEif;
    out.ci = {out.delta, out.delta};
  } else {
    out.ci = wald_ci(out.delta, out.eif, c.n, options.level);
  }
  if (out.conditioning_size < kSmallSampleThreshold) out.flags |= kFlagSmallSample;
  return out;
}

}  // namespace playereval
