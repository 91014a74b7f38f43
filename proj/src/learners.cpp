#include "playereval/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "playereval/error.hpp"
#include "playereval/stats.hpp"

namespace playereval {

namespace {

constexpr double kHessianRegulariser = 1e-6;
constexpr double kMaxLeafStep = 5.0;

double mean_of(const Eigen::VectorXi& y) {
  return y.cast<double>().mean();
}

void require_finite(const Eigen::MatrixXd& x) {
  if (!x.allFinite()) fail(ErrorKind::NonFinite, "features contain non-finite values");
}

Eigen::VectorXd clipped(const Eigen::VectorXd& eta) {
  return clip_probability(expit(eta.array())).matrix();
}

double penalised_objective(const Eigen::VectorXd& eta, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& beta, double ridge) {
  double nll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    // log(1 + e^eta) - y * eta, computed stably
    const double e = eta[i];
    nll += (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) - y[i] * e;
  }
  return nll + 0.5 * ridge * beta.squaredNorm();
}

}  // namespace

std::string LearnerConfig::name() const {
  switch (kind) {
    case LearnerKind::Mean: return "mean";
    case LearnerKind::Logistic: return interactions ? "logistic_interactions" : "logistic";
    case LearnerKind::BoostedStumps: return "stumps";
  }
  return "unknown";
}

LearnerKind BinaryLearnerModel::kind() const {
  switch (parameters_.index()) {
    case 0: return LearnerKind::Mean;
    case 1: return LearnerKind::Logistic;
    default: return LearnerKind::BoostedStumps;
  }
}

Eigen::VectorXd BinaryLearnerModel::linear_predictor(const Eigen::MatrixXd& x) const {
  const Index n = x.rows();
  if (const auto* mean = std::get_if<MeanFit>(&parameters_)) {
    return Eigen::VectorXd::Constant(n, logit(clip_probability(mean->rate)));
  }
  if (const auto* fit = std::get_if<LogisticFit>(&parameters_)) {
    if (fit->coefficients.size() == 0) return Eigen::VectorXd::Constant(n, fit->intercept);
    const Eigen::MatrixXd features = fit->interactions ? expand_interactions(x) : x;
    if (features.cols() != fit->coefficients.size())
      fail(ErrorKind::InvalidArgument, "feature dimension does not match fitted logistic model");
    return (features * fit->coefficients).array() + fit->intercept;
  }
  const auto& fit = std::get<StumpsFit>(parameters_);
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, fit.base);
  for (const Stump& s : fit.stumps) {
    for (Index i = 0; i < n; ++i) {
      const bool left = s.feature < 0 || x(i, s.feature) <= s.threshold;
      eta[i] += fit.shrinkage * (left ? s.left : s.right);
    }
  }
  return eta;
}

Eigen::VectorXd BinaryLearnerModel::predict(const Eigen::MatrixXd& x) const {
  if (const auto* mean = std::get_if<MeanFit>(&parameters_)) {
    return Eigen::VectorXd::Constant(x.rows(), clip_probability(mean->rate));
  }
  return clipped(linear_predictor(x));
}

Eigen::VectorXd BinaryLearnerModel::predict(const Eigen::MatrixXd& x,
                                            const Eigen::VectorXd& offset) const {
  return clipped(linear_predictor(x) + offset);
}

Eigen::MatrixXd expand_interactions(const Eigen::MatrixXd& x) {
  const Index p = x.cols();
  Eigen::MatrixXd out(x.rows(), p + p * (p - 1) / 2);
  out.leftCols(p) = x;
  Index c = p;
  for (Index j = 0; j < p; ++j)
    for (Index k = j + 1; k < p; ++k) out.col(c++) = x.col(j).cwiseProduct(x.col(k));
  return out;
}

double log_loss(const Eigen::VectorXi& y, const Eigen::VectorXd& p) {
  double total = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double q = clip_probability(p[i]);
    total -= y[i] == 1 ? std::log(q) : std::log1p(-q);
  }
  return total / static_cast<double>(y.size());
}

BinaryLearnerModel fit_mean(const Eigen::VectorXi& targets) {
  if (targets.size() == 0) fail(ErrorKind::EmptyData, "cannot fit a mean learner to no targets");
  return BinaryLearnerModel(BinaryLearnerModel::MeanFit{mean_of(targets)});
}

BinaryLearnerModel fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXi& targets,
                                const LogisticOptions& options) {
  const Index n = features.rows();
  if (n == 0 || targets.size() != n)
    fail(ErrorKind::EmptyData, "logistic regression needs matching, non-empty rows and targets");
  if (options.ridge < 0) fail(ErrorKind::InvalidArgument, "ridge must be non-negative");
  if (options.offset && options.offset->size() != n)
    fail(ErrorKind::InvalidArgument, "offset length does not match rows");
  require_finite(features);

  const Eigen::MatrixXd x = options.interactions ? expand_interactions(features) : features;
  const Index p = x.cols();
  const Eigen::VectorXd y = targets.cast<double>();
  const Eigen::VectorXd offset = options.offset ? *options.offset : Eigen::VectorXd::Zero(n);

  BinaryLearnerModel::LogisticFit fit;
  fit.interactions = options.interactions;
  fit.coefficients = Eigen::VectorXd::Zero(p);

  const double ybar = y.mean();
  if (!options.offset && options.intercept && (ybar == 0.0 || ybar == 1.0)) {
    fit.intercept = logit(clip_probability(ybar));
    return BinaryLearnerModel(std::move(fit));
  }

  // Standardise; columns without spread are left out of the fit.
  Eigen::VectorXd centre = x.colwise().mean().transpose();
  Eigen::VectorXd scale(p);
  std::vector<Index> active;
  for (Index k = 0; k < p; ++k) {
    const double sd = std::sqrt((x.col(k).array() - centre[k]).square().mean());
    scale[k] = sd;
    if (sd > 1e-12 * (1.0 + std::abs(centre[k]))) active.push_back(k);
  }
  const Index q = static_cast<Index>(active.size());
  const Index off = options.intercept ? 1 : 0;
  const Index dim = q + off;
  Eigen::MatrixXd z(n, dim);
  if (options.intercept) z.col(0).setOnes();
  for (Index j = 0; j < q; ++j) {
    const Index k = active[static_cast<std::size_t>(j)];
    z.col(j + off) = (x.col(k).array() - centre[k]) / scale[k];
  }

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);
  if (options.intercept && !options.offset) theta[0] = logit(clip_probability(ybar));
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(dim, options.ridge);
  if (options.intercept) penalty[0] = 0.0;

  auto objective = [&](const Eigen::VectorXd& t) {
    const Eigen::VectorXd eta = offset + z * t;
    return penalised_objective(eta, y, t.cwiseProduct(penalty.cwiseSqrt()), 1.0);
  };
  auto score_at = [&](const Eigen::VectorXd& t) -> Eigen::VectorXd {
    const Eigen::VectorXd prob = expit((offset + z * t).array()).matrix();
    return z.transpose() * (y - prob) - penalty.cwiseProduct(t);
  };

  double current = objective(theta);
  Eigen::VectorXd score = score_at(theta);
  int it = 0;
  for (; it < options.max_iterations && dim > 0; ++it) {
    if (!score.allFinite()) fail(ErrorKind::NonFinite, "logistic score became non-finite");
    if (score.cwiseAbs().maxCoeff() < options.tolerance) break;
    const Eigen::VectorXd prob = expit((offset + z * theta).array()).matrix();
    const Eigen::VectorXd w = prob.array() * (1.0 - prob.array());
    Eigen::MatrixXd hessian = z.transpose() * w.asDiagonal() * z;
    hessian.diagonal() += penalty;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
    const Eigen::VectorXd d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success ||
        (options.ridge == 0.0 && (d.minCoeff() <= 1e-12 * dmax || dmax == 0.0)))
      fail(ErrorKind::SingularSystem, "penalised normal equations are numerically singular");
    Eigen::VectorXd step = ldlt.solve(score);
    if (!step.allFinite()) fail(ErrorKind::NonFinite, "logistic Newton step is non-finite");

    double factor = 1.0;
    Eigen::VectorXd candidate = theta + step;
    double value = objective(candidate);
    // Near the optimum the decrease is below rounding of the objective itself.
    const double slack = 1e-12 * (1.0 + std::abs(current));
    for (int halving = 0; halving < 40 && !(value <= current + slack); ++halving) {
      factor *= 0.5;
      candidate = theta + factor * step;
      value = objective(candidate);
    }
    if (!(value <= current + slack)) break;
    theta = candidate;
    current = value;
    score = score_at(theta);
  }
  fit.iterations = it;
  fit.max_abs_score = dim > 0 ? score.cwiseAbs().maxCoeff() : 0.0;

  double intercept = options.intercept ? theta[0] : 0.0;
  for (Index j = 0; j < q; ++j) {
    const Index k = active[static_cast<std::size_t>(j)];
    const double b = theta[j + off] / scale[k];
    fit.coefficients[k] = b;
    intercept -= b * centre[k];
  }
  fit.intercept = intercept;
  if (!std::isfinite(fit.intercept) || !fit.coefficients.allFinite())
    fail(ErrorKind::NonFinite, "logistic coefficients are non-finite");
  return BinaryLearnerModel(std::move(fit));
}

BinaryLearnerModel fit_boosted_stumps(const Eigen::MatrixXd& features, const Eigen::VectorXi& targets,
                                      int rounds, double shrinkage) {
  const Index n = features.rows();
  if (n == 0 || targets.size() != n) fail(ErrorKind::EmptyData, "boosting needs non-empty data");
  if (rounds < 1) fail(ErrorKind::InvalidArgument, "boosting needs at least one round");
  if (!(shrinkage > 0.0 && shrinkage <= 1.0))
    fail(ErrorKind::InvalidArgument, "shrinkage must lie in (0, 1]");
  require_finite(features);

  const Index p = features.cols();
  const Eigen::VectorXd y = targets.cast<double>();
  BinaryLearnerModel::StumpsFit fit;
  fit.shrinkage = shrinkage;
  fit.base = logit(clip_probability(y.mean()));

  std::vector<std::vector<Index>> order(static_cast<std::size_t>(p));
  for (Index k = 0; k < p; ++k) {
    auto& o = order[static_cast<std::size_t>(k)];
    o.resize(static_cast<std::size_t>(n));
    std::iota(o.begin(), o.end(), Index{0});
    std::stable_sort(o.begin(), o.end(),
                     [&](Index a, Index b) { return features(a, k) < features(b, k); });
  }

  Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, fit.base);
  for (int r = 0; r < rounds; ++r) {
    const Eigen::VectorXd prob = expit(eta.array()).matrix();
    const Eigen::VectorXd g = y - prob;
    const Eigen::VectorXd h = prob.array() * (1.0 - prob.array());
    const double g_total = g.sum();
    const double h_total = h.sum();
    const double root = g_total * g_total / (h_total + kHessianRegulariser);

    Stump best;
    double best_gain = 1e-12 * (1.0 + root);
    for (Index k = 0; k < p; ++k) {
      const auto& o = order[static_cast<std::size_t>(k)];
      double gl = 0.0, hl = 0.0;
      for (Index s = 0; s + 1 < n; ++s) {
        const Index i = o[static_cast<std::size_t>(s)];
        gl += g[i];
        hl += h[i];
        const double v = features(i, k);
        const double next = features(o[static_cast<std::size_t>(s + 1)], k);
        if (!(next > v)) continue;
        const double gr = g_total - gl, hr = h_total - hl;
        const double gain = gl * gl / (hl + kHessianRegulariser) +
                            gr * gr / (hr + kHessianRegulariser) - root;
        if (gain > best_gain) {
          best_gain = gain;
          best.feature = k;
          best.threshold = 0.5 * (v + next);
          best.left = std::clamp(gl / (hl + kHessianRegulariser), -kMaxLeafStep, kMaxLeafStep);
          best.right = std::clamp(gr / (hr + kHessianRegulariser), -kMaxLeafStep, kMaxLeafStep);
        }
      }
    }
    if (best.feature < 0) {
      const double step = std::clamp(g_total / (h_total + kHessianRegulariser), -kMaxLeafStep,
                                     kMaxLeafStep);
      if (std::abs(step) < 1e-12) {
        fit.loss_trace.push_back(log_loss(targets, clipped(eta)));
        break;
      }
      best.left = best.right = step;
    }
    for (Index i = 0; i < n; ++i) {
      const bool left = best.feature < 0 || features(i, best.feature) <= best.threshold;
      eta[i] += shrinkage * (left ? best.left : best.right);
    }
    fit.stumps.push_back(best);
    fit.loss_trace.push_back(log_loss(targets, clipped(eta)));
  }
  return BinaryLearnerModel(std::move(fit));
}

BinaryLearnerModel fit_learner(const LearnerConfig& config, const Eigen::MatrixXd& features,
                               const Eigen::VectorXi& targets) {
  switch (config.kind) {
    case LearnerKind::Mean: return fit_mean(targets);
    case LearnerKind::Logistic: {
      LogisticOptions options;
      options.ridge = config.ridge;
      options.interactions = config.interactions;
      return fit_logistic(features, targets, options);
    }
    case LearnerKind::BoostedStumps:
      return fit_boosted_stumps(features, targets, config.rounds, config.shrinkage);
  }
  fail(ErrorKind::InvalidArgument, "unknown learner kind");
}

Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  const Index k = v.size();
  std::vector<double> u(v.data(), v.data() + k);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, tau = 0.0;
  for (Index j = 0; j < k; ++j) {
    cumulative += u[static_cast<std::size_t>(j)];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0) tau = t;
  }
  Eigen::VectorXd w = (v.array() - tau).cwiseMax(0.0).matrix();
  return w / w.sum();
}

Eigen::VectorXd stack_weights(const Eigen::MatrixXd& cv_predictions, const Eigen::VectorXi& targets) {
  const Index k = cv_predictions.cols();
  const Index n = cv_predictions.rows();
  if (k == 1) return Eigen::VectorXd::Ones(1);
  const Eigen::ArrayXd y = targets.cast<double>().array();

  auto loss = [&](const Eigen::VectorXd& w) { return log_loss(targets, cv_predictions * w); };

  Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  Eigen::VectorXd best = w;
  double best_loss = loss(w);
  for (int it = 0; it < 500; ++it) {
    const Eigen::ArrayXd p = (cv_predictions * w).array().unaryExpr(
        [](double v) { return clip_probability(v); });
    const Eigen::VectorXd residual_weight = (y / p - (1.0 - y) / (1.0 - p)).matrix();
    const Eigen::VectorXd gradient =
        -(cv_predictions.transpose() * residual_weight) / static_cast<double>(n);
    const Eigen::VectorXd next = project_to_simplex(w - 0.1 * gradient);
    const double next_loss = loss(next);
    if (next_loss < best_loss) {
      best_loss = next_loss;
      best = next;
    }
    const bool converged = (next - w).cwiseAbs().maxCoeff() < 1e-9;
    w = next;
    if (converged) break;
  }
  for (Index c = 0; c < k; ++c) {
    const double vertex_loss = log_loss(targets, cv_predictions.col(c));
    if (vertex_loss < best_loss) {
      best_loss = vertex_loss;
      best = Eigen::VectorXd::Unit(k, c);
    }
  }
  return best;
}

Eigen::VectorXd SuperLearnerModel::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double w = weights[static_cast<Index>(c)];
    if (w == 0.0) continue;
    out += w * candidates[c].predict(x);
  }
  return clip_probability(out.array()).matrix();
}

SuperLearnerModel fit_super_learner(const Eigen::MatrixXd& features, const Eigen::VectorXi& targets,
                                    const std::vector<LearnerConfig>& candidates, int folds,
                                    std::uint64_t seed) {
  const Index n = features.rows();
  if (candidates.empty()) fail(ErrorKind::InvalidArgument, "super learner needs candidates");
  if (folds < 2) fail(ErrorKind::InvalidArgument, "super learner needs at least two folds");
  if (n < folds) fail(ErrorKind::InvalidArgument, "super learner needs at least one row per fold");

  SuperLearnerModel model;
  model.configs = candidates;
  const Index k = static_cast<Index>(candidates.size());
  if (k > 1) {
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::mt19937_64 rng(seed);
    portable_shuffle(perm, rng);
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    for (Index r = 0; r < n; ++r)
      fold_of[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)])] = static_cast<int>(r % folds);

    model.cv_predictions.resize(n, k);
    for (int f = 0; f < folds; ++f) {
      std::vector<Index> train, valid;
      for (Index i = 0; i < n; ++i) (fold_of[static_cast<std::size_t>(i)] == f ? valid : train).push_back(i);
      const Eigen::MatrixXd x_train = features(train, Eigen::all);
      const Eigen::VectorXi y_train = targets(train);
      const Eigen::MatrixXd x_valid = features(valid, Eigen::all);
      for (Index c = 0; c < k; ++c) {
        const auto fitted = fit_learner(candidates[static_cast<std::size_t>(c)], x_train, y_train);
        const Eigen::VectorXd pred = fitted.predict(x_valid);
        for (std::size_t r = 0; r < valid.size(); ++r) model.cv_predictions(valid[r], c) = pred[static_cast<Index>(r)];
      }
    }
    model.cv_log_loss.resize(k);
    for (Index c = 0; c < k; ++c) model.cv_log_loss[c] = log_loss(targets, model.cv_predictions.col(c));
    model.weights = stack_weights(model.cv_predictions, targets);
    model.ensemble_cv_log_loss = log_loss(targets, model.cv_predictions * model.weights);
  } else {
    model.weights = Eigen::VectorXd::Ones(1);
  }
  for (const auto& config : candidates) model.candidates.push_back(fit_learner(config, features, targets));
  return model;
}

Eigen::MatrixXd normalize_propensity_rows(Eigen::MatrixXd raw) {
  for (Index i = 0; i < raw.rows(); ++i) {
    auto row = raw.row(i);
    row /= row.sum();
    row = row.cwiseMax(kProbabilityFloor);
    row /= row.sum();
  }
  return raw;
}

Eigen::MatrixXd PropensityModel::predict(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd raw(x.rows(), player_count());
  for (int a = 0; a < player_count(); ++a) raw.col(a) = per_player_[static_cast<std::size_t>(a)].predict(x);
  return normalize_propensity_rows(std::move(raw));
}

PropensityModel fit_propensity(const Eigen::MatrixXd& features, const Eigen::VectorXi& players,
                               int player_count, const std::vector<LearnerConfig>& candidates,
                               int folds, std::uint64_t seed) {
  if (player_count < 2) fail(ErrorKind::InvalidArgument, "propensity model needs at least two players");
  if (players.size() != features.rows()) fail(ErrorKind::InvalidArgument, "player vector length mismatch");
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(player_count);
  for (Index i = 0; i < players.size(); ++i) {
    if (players[i] < 0 || players[i] >= player_count)
      fail(ErrorKind::InvalidArgument, "player index out of range");
    ++counts[players[i]];
  }
  for (int a = 0; a < player_count; ++a) {
    if (counts[a] == 0)
      fail(ErrorKind::DegeneratePlayer,
           "player " + std::to_string(a) + " has no observations in the training data");
  }
  std::vector<SuperLearnerModel> models;
  models.reserve(static_cast<std::size_t>(player_count));
  for (int a = 0; a < player_count; ++a) {
    const Eigen::VectorXi target = (players.array() == a).cast<int>();
    models.push_back(fit_super_learner(features, target, candidates, folds,
                                       seed + static_cast<std::uint64_t>(a)));
  }
  return PropensityModel(std::move(models));
}

}  // namespace playereval
