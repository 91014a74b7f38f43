#include "playereval/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <future>
#include <numeric>
#include <random>

#include "playereval/error.hpp"
#include "playereval/stats.hpp"

namespace playereval {

Eigen::VectorXd LinearScores::evaluate(const Eigen::VectorXd& x) const {
  Eigen::VectorXd s = intercept;
  if (slope.size() > 0) s += slope * x;
  if (interaction.size() > 0 && x.size() >= 2) s += interaction * (x[0] * x[1]);
  return s;
}

Index DgpSpec::dimension() const {
  if (const auto* d = std::get_if<DiscreteCovariates>(&covariates))
    return d->cells.empty() ? 0 : d->cells.front().size();
  return static_cast<Index>(std::get<ContinuousCovariates>(covariates).components.size());
}

namespace {

Index cell_of(const DgpSpec& dgp, const Eigen::VectorXd& x) {
  const auto* d = std::get_if<DiscreteCovariates>(&dgp.covariates);
  if (d == nullptr) fail(ErrorKind::InvalidDgp, "table nuisances need discrete covariates");
  for (std::size_t c = 0; c < d->cells.size(); ++c)
    if (d->cells[c] == x) return static_cast<Index>(c);
  fail(ErrorKind::InvalidDgp, "covariate vector is not a support point");
}

Eigen::VectorXd softmax(const Eigen::VectorXd& s) {
  const Eigen::ArrayXd e = (s.array() - s.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

}  // namespace

Eigen::VectorXd DgpSpec::propensity_at(const Eigen::VectorXd& x) const {
  if (const auto* t = std::get_if<CellTable>(&propensity)) return t->row(cell_of(*this, x)).transpose();
  return softmax(std::get<LinearScores>(propensity).evaluate(x));
}

Eigen::VectorXd DgpSpec::outcome_at(const Eigen::VectorXd& x) const {
  if (const auto* t = std::get_if<CellTable>(&outcome)) return t->row(cell_of(*this, x)).transpose();
  return expit(std::get<LinearScores>(outcome).evaluate(x).array()).matrix();
}

void validate(const DgpSpec& dgp) {
  const int m = dgp.player_count;
  if (m < 2) fail(ErrorKind::InvalidDgp, "a DGP needs at least two players");
  const Index p = dgp.dimension();
  if (p < 1) fail(ErrorKind::InvalidDgp, "a DGP needs at least one covariate");
  if (!dgp.covariate_names.empty() && static_cast<Index>(dgp.covariate_names.size()) != p)
    fail(ErrorKind::InvalidDgp, "covariate names do not match the dimension");
  auto check_scores = [&](const LinearScores& s, const char* what) {
    if (s.intercept.size() != m) fail(ErrorKind::InvalidDgp, std::string(what) + " intercepts must have one entry per player");
    if (s.slope.size() > 0 && (s.slope.rows() != m || s.slope.cols() != p))
      fail(ErrorKind::InvalidDgp, std::string(what) + " slopes must be players x covariates");
    if (s.interaction.size() > 0 && (s.interaction.size() != m || p < 2))
      fail(ErrorKind::InvalidDgp, std::string(what) + " interaction needs one entry per player and two covariates");
    if (!s.intercept.allFinite() || !s.slope.allFinite() || !s.interaction.allFinite())
      fail(ErrorKind::InvalidDgp, std::string(what) + " coefficients must be finite");
  };
  Index cells = 0;
  if (const auto* d = std::get_if<DiscreteCovariates>(&dgp.covariates)) {
    cells = static_cast<Index>(d->cells.size());
    if (cells == 0 || d->probabilities.size() != cells) fail(ErrorKind::InvalidDgp, "cell probabilities do not match the cells");
    if ((d->probabilities.array() < 0.0).any() || std::abs(d->probabilities.sum() - 1.0) > 1e-12)
      fail(ErrorKind::InvalidDgp, "cell probabilities must be non-negative and sum to one");
    for (const auto& x : d->cells)
      if (x.size() != p) fail(ErrorKind::InvalidDgp, "cells must share one dimension");
  } else {
    for (const auto& c : std::get<ContinuousCovariates>(dgp.covariates).components) {
      if (c.kind == CovariateComponent::Kind::Uniform && !(c.second > c.first))
        fail(ErrorKind::InvalidDgp, "uniform components need lower < upper");
      if (c.kind == CovariateComponent::Kind::Normal && !(c.second > 0.0))
        fail(ErrorKind::InvalidDgp, "normal components need a positive sd");
    }
  }
  if (const auto* t = std::get_if<CellTable>(&dgp.propensity)) {
    if (cells == 0) fail(ErrorKind::InvalidDgp, "propensity tables need discrete covariates");
    if (t->rows() != cells || t->cols() != m) fail(ErrorKind::InvalidDgp, "propensity table must be cells x players");
    if ((t->array() < 0.0).any()) fail(ErrorKind::InvalidDgp, "propensities must be non-negative");
    for (Index c = 0; c < cells; ++c)
      if (std::abs(t->row(c).sum() - 1.0) > 1e-12) fail(ErrorKind::InvalidDgp, "propensity rows must sum to one");
  } else {
    check_scores(std::get<LinearScores>(dgp.propensity), "propensity");
  }
  if (const auto* t = std::get_if<CellTable>(&dgp.outcome)) {
    if (cells == 0) fail(ErrorKind::InvalidDgp, "outcome tables need discrete covariates");
    if (t->rows() != cells || t->cols() != m) fail(ErrorKind::InvalidDgp, "outcome table must be cells x players");
    if ((t->array() < 0.0).any() || (t->array() > 1.0).any())
      fail(ErrorKind::InvalidDgp, "outcome probabilities must lie in [0, 1]");
  } else {
    check_scores(std::get<LinearScores>(dgp.outcome), "outcome");
  }
}

std::vector<std::string> simulated_player_labels(int player_count) {
  std::vector<std::string> labels;
  for (int a = 0; a < player_count; ++a) labels.push_back("P" + std::to_string(a + 1));
  return labels;
}

namespace {

std::vector<std::string> covariate_names_of(const DgpSpec& dgp) {
  if (!dgp.covariate_names.empty()) return dgp.covariate_names;
  std::vector<std::string> names;
  for (Index j = 0; j < dgp.dimension(); ++j) names.push_back("x" + std::to_string(j));
  return names;
}

int draw_index(const Eigen::VectorXd& probabilities, double u) {
  double cumulative = 0.0;
  const auto last = static_cast<int>(probabilities.size()) - 1;
  for (int k = 0; k < last; ++k) {
    cumulative += probabilities[k];
    if (u < cumulative) return k;
  }
  return last;
}

double draw_normal(std::mt19937_64& rng) {
  // Box-Muller on portable uniforms.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Eigen::VectorXd draw_covariates(const DgpSpec& dgp, std::mt19937_64& rng) {
  if (const auto* d = std::get_if<DiscreteCovariates>(&dgp.covariates))
    return d->cells[static_cast<std::size_t>(draw_index(d->probabilities, uniform01(rng)))];
  const auto& comps = std::get<ContinuousCovariates>(dgp.covariates).components;
  Eigen::VectorXd x(static_cast<Index>(comps.size()));
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const auto& c = comps[j];
    x[static_cast<Index>(j)] = c.kind == CovariateComponent::Kind::Uniform
                                   ? c.first + (c.second - c.first) * uniform01(rng)
                                   : c.first + c.second * draw_normal(rng);
  }
  return x;
}

}  // namespace

Dataset generate(const DgpSpec& dgp, Index n, std::uint64_t seed) {
  validate(dgp);
  if (n < 1) fail(ErrorKind::InvalidArgument, "n must be positive");
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd x(n, dgp.dimension());
  Eigen::VectorXi a(n), y(n);
  for (Index i = 0; i < n; ++i) {
    const Eigen::VectorXd xi = draw_covariates(dgp, rng);
    x.row(i) = xi.transpose();
    a[i] = draw_index(dgp.propensity_at(xi), uniform01(rng));
    y[i] = uniform01(rng) < dgp.outcome_at(xi)[a[i]] ? 1 : 0;
  }
  return Dataset(std::move(x), std::move(a), std::move(y), simulated_player_labels(dgp.player_count),
                 covariate_names_of(dgp));
}

DiscreteLaw discrete_law(const DgpSpec& dgp) {
  validate(dgp);
  const auto* d = std::get_if<DiscreteCovariates>(&dgp.covariates);
  if (d == nullptr) fail(ErrorKind::NonDiscreteDgp, "exact enumeration needs a discrete DGP");
  DiscreteLaw law;
  law.cells = d->cells;
  law.probabilities = d->probabilities;
  const auto cells = static_cast<Index>(d->cells.size());
  law.pi.resize(cells, dgp.player_count);
  law.mu.resize(cells, dgp.player_count);
  for (Index c = 0; c < cells; ++c) {
    law.pi.row(c) = dgp.propensity_at(d->cells[static_cast<std::size_t>(c)]).transpose();
    law.mu.row(c) = dgp.outcome_at(d->cells[static_cast<std::size_t>(c)]).transpose();
  }
  return law;
}

Dataset population_dataset(const DgpSpec& dgp, Index total) {
  const DiscreteLaw law = discrete_law(dgp);
  const Index cells = law.pi.rows();
  const int m = dgp.player_count;
  auto whole = [](double v) {
    const double r = std::round(v);
    if (std::abs(v - r) > 1e-6) fail(ErrorKind::InvalidDgp, "population counts are not integers at this total");
    return static_cast<Index>(r);
  };
  std::vector<AttemptRecord> records;
  for (Index c = 0; c < cells; ++c) {
    for (int b = 0; b < m; ++b) {
      const double attempts = static_cast<double>(total) * law.probabilities[c] * law.pi(c, b);
      const Index count = whole(attempts);
      const Index successes = whole(attempts * law.mu(c, b));
      for (Index k = 0; k < count; ++k)
        records.push_back({law.cells[static_cast<std::size_t>(c)], b, k < successes ? 1 : 0});
    }
  }
  if (records.empty()) fail(ErrorKind::InvalidDgp, "population is empty");
  return Dataset::from_records(records, simulated_player_labels(m), covariate_names_of(dgp));
}

namespace {

// Per-cell plug-in pieces of the identified functional.
struct CellTerms {
  /// 1(x in X') p(x) pi(A' | x)
  Eigen::VectorXd weight;
  /// Integrand: mu(a, x), mean over a' of mu(a', x), or m(x).
  Eigen::VectorXd integrand;
  Eigen::VectorXd pi_set;
  Eigen::VectorXd w;
  Eigen::VectorXd g;
  std::vector<bool> in_s;
};

CellTerms cell_terms(const DiscreteLaw& law, const EstimandSpec& spec) {
  const Index cells = law.pi.rows();
  const auto m = static_cast<int>(law.pi.cols());
  if (spec.focal_player < 0 || spec.focal_player >= m) fail(ErrorKind::InvalidArgument, "focal player out of range");
  CellTerms t;
  t.in_s = player_mask(spec, m);
  t.g = Eigen::VectorXd::Zero(m);
  if (spec.kind == EstimandKind::Direct) t.g[spec.focal_player] = 1.0;
  if (spec.kind == EstimandKind::RandomReplacement) t.g.setConstant(1.0 / m);
  t.weight.resize(cells);
  t.integrand.resize(cells);
  t.pi_set.resize(cells);
  t.w.resize(cells);
  for (Index c = 0; c < cells; ++c) {
    t.w[c] = spec.x_condition.admits(law.cells[static_cast<std::size_t>(c)].transpose()) ? 1.0 : 0.0;
    double s = 0.0;
    for (int b = 0; b < m; ++b)
      if (t.in_s[static_cast<std::size_t>(b)]) s += law.pi(c, b);
    t.pi_set[c] = s;
    t.weight[c] = t.w[c] * law.probabilities[c] * s;
    t.integrand[c] = spec.kind == EstimandKind::Indirect ? law.pi.row(c).dot(law.mu.row(c)) : law.mu.row(c).dot(t.g);
  }
  if (!(t.weight.sum() > 0.0)) fail(ErrorKind::EmptyConditioningSet, "the conditioning set has zero probability");
  return t;
}

}  // namespace

double oracle_exact(const DiscreteLaw& law, const EstimandSpec& spec) {
  const CellTerms t = cell_terms(law, spec);
  return t.weight.dot(t.integrand) / t.weight.sum();
}

double oracle_exact(const DgpSpec& dgp, const EstimandSpec& spec) { return oracle_exact(discrete_law(dgp), spec); }

double eif_second_moment(const DgpSpec& dgp, const EstimandSpec& spec) {
  const DiscreteLaw law = discrete_law(dgp);
  const CellTerms t = cell_terms(law, spec);
  const double q = t.weight.sum();
  const double psi = t.weight.dot(t.integrand) / q;
  const auto m = static_cast<int>(law.pi.cols());
  double total = 0.0;
  for (Index c = 0; c < law.pi.rows(); ++c) {
    if (t.w[c] == 0.0) continue;
    for (int b = 0; b < m; ++b) {
      const double member = t.in_s[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
      for (int y = 0; y <= 1; ++y) {
        const double mu = law.mu(c, b);
        const double prob = law.probabilities[c] * law.pi(c, b) * (y == 1 ? mu : 1.0 - mu);
        if (prob == 0.0) continue;
        double d = 0.0;
        if (spec.kind == EstimandKind::Indirect) {
          d = t.pi_set[c] * (y - t.integrand[c]) + member * (t.integrand[c] - psi);
        } else {
          d = t.g[b] * t.pi_set[c] / law.pi(c, b) * (y - mu) + member * (t.integrand[c] - psi);
        }
        d /= q;
        total += prob * d * d;
      }
    }
  }
  return total;
}

OracleValues oracle_values(const DgpSpec& dgp, const XCondition& x_condition) {
  const DiscreteLaw law = discrete_law(dgp);
  const int m = dgp.player_count;
  OracleValues out;
  for (auto* v : {&out.direct, &out.indirect, &out.rand, &out.direct_second_moment, &out.indirect_second_moment,
                  &out.rand_second_moment, &out.indirect_contrast, &out.rand_contrast})
    v->setZero(m);
  for (int a = 0; a < m; ++a) {
    EstimandSpec spec;
    spec.focal_player = a;
    spec.x_condition = x_condition;
    spec.kind = EstimandKind::Direct;
    out.direct[a] = oracle_exact(law, spec);
    out.direct_second_moment[a] = eif_second_moment(dgp, spec);
    spec.kind = EstimandKind::Indirect;
    out.indirect[a] = oracle_exact(law, spec);
    out.indirect_second_moment[a] = eif_second_moment(dgp, spec);
    spec.kind = EstimandKind::RandomReplacement;
    out.rand[a] = oracle_exact(law, spec);
    out.rand_second_moment[a] = eif_second_moment(dgp, spec);

    double num = 0.0, den = 0.0;
    for (Index c = 0; c < law.pi.rows(); ++c) {
      if (!x_condition.admits(law.cells[static_cast<std::size_t>(c)].transpose())) continue;
      num += law.probabilities[c] * law.pi(c, a) * law.mu(c, a);
      den += law.probabilities[c] * law.pi(c, a);
    }
    const double own = num / den;
    out.indirect_contrast[a] = own - out.indirect[a];
    out.rand_contrast[a] = own - out.rand[a];
  }
  return out;
}

MonteCarloOracle oracle_mc(const DgpSpec& dgp, const EstimandSpec& spec, Index draws, std::uint64_t seed) {
  validate(dgp);
  if (draws < 10'000) fail(ErrorKind::InvalidArgument, "Monte Carlo oracle needs at least 10^4 draws");
  const int m = dgp.player_count;
  if (spec.focal_player < 0 || spec.focal_player >= m) fail(ErrorKind::InvalidArgument, "focal player out of range");
  const std::vector<bool> in_s = player_mask(spec, m);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
  if (spec.kind == EstimandKind::Direct) g[spec.focal_player] = 1.0;
  if (spec.kind == EstimandKind::RandomReplacement) g.setConstant(1.0 / m);

  std::mt19937_64 rng(seed);
  std::vector<double> weight, value;
  weight.reserve(static_cast<std::size_t>(draws));
  value.reserve(static_cast<std::size_t>(draws));
  for (Index k = 0; k < draws; ++k) {
    const Eigen::VectorXd x = draw_covariates(dgp, rng);
    if (!spec.x_condition.admits(x.transpose())) continue;
    const Eigen::VectorXd pi = dgp.propensity_at(x);
    const Eigen::VectorXd mu = dgp.outcome_at(x);
    double s = 0.0;
    for (int b = 0; b < m; ++b)
      if (in_s[static_cast<std::size_t>(b)]) s += pi[b];
    weight.push_back(s);
    value.push_back(spec.kind == EstimandKind::Indirect ? pi.dot(mu) : mu.dot(g));
  }
  if (weight.empty()) fail(ErrorKind::EmptyConditioningSet, "no draws satisfy the covariate condition");
  // Ratio estimator shifted by the first value, so constant integrands are exact.
  const double shift = value.front();
  double wsum = 0.0, acc = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    wsum += weight[k];
    acc += weight[k] * (value[k] - shift);
  }
  MonteCarloOracle out;
  if (!(wsum > 0.0)) fail(ErrorKind::EmptyConditioningSet, "the conditioning set has zero probability");
  out.estimate = shift + acc / wsum;
  double ss = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    const double r = weight[k] * (value[k] - out.estimate);
    ss += r * r;
  }
  // Delta-method standard error of the ratio over all draws.
  out.mc_se = std::sqrt(ss) / wsum;
  return out;
}

NuisanceMatrices exact_nuisances(const DgpSpec& dgp, const Dataset& data, const FoldAssignment& folds,
                                 const XCondition& x_condition) {
  validate(dgp);
  const Index n = data.size();
  const int m = data.player_count();
  if (m != dgp.player_count) fail(ErrorKind::InvalidArgument, "dataset and DGP disagree on the player count");
  if (folds.size() != n) fail(ErrorKind::InvalidArgument, "fold assignment does not match the dataset");
  NuisanceMatrices out;
  out.mu.resize(n, m);
  out.pi.resize(n, m);
  out.m_bar.resize(n);
  out.x_condition = x_condition;
  for (Index i = 0; i < n; ++i) {
    const Eigen::VectorXd x = data.covariates().row(i).transpose();
    out.mu.row(i) = dgp.outcome_at(x).transpose();
    out.pi.row(i) = dgp.propensity_at(x).transpose();
    out.m_bar[i] = out.pi.row(i).dot(out.mu.row(i));
  }
  FoldPredictions truth;
  truth.pi = out.pi;
  truth.m_bar = out.m_bar;
  truth.mu_observed.resize(n);
  for (Index i = 0; i < n; ++i) truth.mu_observed[i] = out.mu(i, data.players()[i]);
  for (int j = 0; j < folds.fold_count; ++j) {
    out.fold_marginals.push_back(empirical_marginals(data, folds.training[static_cast<std::size_t>(j)], x_condition));
    out.fold_predictions.push_back(truth);
  }
  out.pooled_marginals = empirical_marginals(data, x_condition);
  return out;
}

std::string_view to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::BothCorrect: return "both_correct";
    case Scenario::MuMisspecified: return "mu_misspecified";
    case Scenario::PiMisspecified: return "pi_misspecified";
    case Scenario::BothMisspecified: return "both_misspecified";
  }
  return "unknown";
}

Scenario parse_scenario(std::string_view text) {
  for (Scenario s : {Scenario::BothCorrect, Scenario::MuMisspecified, Scenario::PiMisspecified,
                     Scenario::BothMisspecified})
    if (to_string(s) == text) return s;
  fail(ErrorKind::Config, "unknown scenario '" + std::string(text) + "'");
}

std::vector<LearnerConfig> default_simulation_library() {
  LearnerConfig mean;
  mean.kind = LearnerKind::Mean;
  LearnerConfig logistic;
  logistic.kind = LearnerKind::Logistic;
  logistic.interactions = true;
  return {mean, logistic};
}

const ExperimentRow& ExperimentReport::row(EstimatorKind estimator, EstimandKind estimand, int focal_player) const {
  for (const auto& r : rows)
    if (r.estimator == estimator && r.estimand == estimand && r.focal_player == focal_player) return r;
  fail(ErrorKind::InvalidArgument, "no such experiment row");
}

std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t rep) { return mix_seed(seed, rep); }

namespace {

struct Target {
  EstimatorKind estimator;
  EstimandKind estimand;
  int focal;
};

struct RepOutcome {
  std::vector<bool> ok;
  std::vector<double> psi, se, eif_mean;
};

RepOutcome run_replication(const DgpSpec& dgp, const ExperimentConfig& config, const NuisanceLearners& learners,
                           const std::vector<Target>& targets, std::uint64_t seed) {
  RepOutcome out;
  out.ok.assign(targets.size(), false);
  out.psi.assign(targets.size(), 0.0);
  out.se.assign(targets.size(), 0.0);
  out.eif_mean.assign(targets.size(), 0.0);
  try {
    const Dataset data = generate(dgp, config.n, seed);
    const FoldAssignment folds = make_folds(data.players(), data.player_count(), config.folds, mix_seed(seed, 101));
    NuisanceLearners local = learners;
    local.seed = mix_seed(seed, 202);
    const NuisanceMatrices nu = fit_nuisances(data, folds, local, config.x_condition);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      EstimandSpec spec;
      spec.kind = targets[t].estimand;
      spec.focal_player = targets[t].focal;
      spec.x_condition = config.x_condition;
      try {
        const EstimateResult r = estimate(targets[t].estimator, data, spec, nu, folds, config.options);
        out.psi[t] = r.psi;
        out.se[t] = r.se;
        out.eif_mean[t] = r.eif.size() ? r.eif.mean() : 0.0;
        out.ok[t] = true;
      } catch (const Error&) {
      }
    }
  } catch (const Error&) {
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const DgpSpec& dgp, const ExperimentConfig& config) {
  validate(dgp);
  if (config.replications < 1) fail(ErrorKind::InvalidArgument, "replications must be positive");
  ExperimentReport report;
  report.dgp_name = dgp.name;
  report.scenario = config.scenario;
  report.n = config.n;
  report.replications = config.replications;
  report.seed = config.seed;
  if (config.replications < kRecommendedReplications)
    report.warnings.push_back("replications below recommended minimum of " + std::to_string(kRecommendedReplications));

  const std::vector<LearnerConfig> library =
      config.library.empty() ? default_simulation_library() : config.library;
  LearnerConfig mean_only;
  mean_only.kind = LearnerKind::Mean;
  const bool mu_bad = config.scenario == Scenario::MuMisspecified || config.scenario == Scenario::BothMisspecified;
  const bool pi_bad = config.scenario == Scenario::PiMisspecified || config.scenario == Scenario::BothMisspecified;
  NuisanceLearners learners;
  learners.outcome = mu_bad ? std::vector<LearnerConfig>{mean_only} : library;
  learners.marginal_outcome = learners.outcome;
  learners.propensity = pi_bad ? std::vector<LearnerConfig>{mean_only} : library;
  learners.stack_folds = config.stack_folds;
  learners.keep_fold_predictions = !config.options.epsilon_pool;

  std::vector<Target> targets;
  for (EstimandKind k : config.estimands)
    for (int a : config.focal_players)
      for (EstimatorKind e : config.estimators) targets.push_back({e, k, a});

  std::vector<double> truths;
  for (const auto& t : targets) {
    EstimandSpec spec;
    spec.kind = t.estimand;
    spec.focal_player = t.focal;
    spec.x_condition = config.x_condition;
    truths.push_back(dgp.is_discrete() ? oracle_exact(dgp, spec)
                                       : oracle_mc(dgp, spec, config.oracle_draws, mix_seed(config.seed, 303)).estimate);
  }

  const auto reps = static_cast<std::size_t>(config.replications);
  std::vector<RepOutcome> outcomes(reps);
  const auto threads = static_cast<std::size_t>(std::max(1, config.threads));
  auto worker = [&](std::size_t start) {
    for (std::size_t r = start; r < reps; r += threads)
      outcomes[r] = run_replication(dgp, config, learners, targets, replication_seed(config.seed, r));
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::future<void>> pending;
    for (std::size_t w = 0; w < threads; ++w) pending.push_back(std::async(std::launch::async, worker, w));
    for (auto& p : pending) p.get();
  }

  const double z = two_sided_z(config.options.level);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    ExperimentRow row;
    row.estimator = targets[t].estimator;
    row.estimand = targets[t].estimand;
    row.focal_player = targets[t].focal;
    row.truth = truths[t];
    double covered = 0.0;
    for (const auto& o : outcomes) {
      if (!o.ok[t]) {
        ++row.failures;
        continue;
      }
      row.estimates.push_back(o.psi[t]);
      row.standard_errors.push_back(o.se[t]);
      row.max_abs_eif_mean = std::max(row.max_abs_eif_mean, std::abs(o.eif_mean[t]));
      if (std::abs(o.psi[t] - row.truth) <= z * o.se[t]) covered += 1.0;
    }
    row.completed = static_cast<int>(row.estimates.size());
    if (row.completed > 0) {
      const Eigen::Map<const Eigen::VectorXd> est(row.estimates.data(), row.completed);
      const Eigen::Map<const Eigen::VectorXd> se(row.standard_errors.data(), row.completed);
      row.mean_estimate = est.mean();
      row.bias = row.mean_estimate - row.truth;
      row.empirical_se = row.completed > 1
                             ? std::sqrt((est.array() - row.mean_estimate).square().sum() / (row.completed - 1))
                             : 0.0;
      row.mc_se = row.empirical_se / std::sqrt(static_cast<double>(row.completed));
      const bool has_se = row.estimator != EstimatorKind::Substitution;
      row.mean_estimated_se = has_se ? se.mean() : std::numeric_limits<double>::quiet_NaN();
      row.coverage = has_se ? covered / row.completed : std::numeric_limits<double>::quiet_NaN();
    }
    if (row.failures > 0)
      report.warnings.push_back(std::string(to_string(row.estimator)) + "/" + std::string(to_string(row.estimand)) +
                                ": " + std::to_string(row.failures) + " replications failed");
    report.rows.push_back(std::move(row));
  }
  return report;
}

VonMisesCheck von_mises_check(const DiscreteLaw& p, const DiscreteLaw& f, int a, int a_prime,
                              const XCondition& x_condition) {
  const Index cells = p.pi.rows();
  if (f.pi.rows() != cells || f.pi.cols() != p.pi.cols() || f.mu.rows() != cells)
    fail(ErrorKind::InvalidArgument, "perturbed law must share the support of the base law");
  Eigen::VectorXd w(cells);
  for (Index c = 0; c < cells; ++c) w[c] = x_condition.admits(p.cells[static_cast<std::size_t>(c)].transpose()) ? 1.0 : 0.0;

  auto theta = [&](const DiscreteLaw& law, double* q) {
    double num = 0.0, den = 0.0;
    for (Index c = 0; c < cells; ++c) {
      const double mass = w[c] * law.probabilities[c] * law.pi(c, a);
      num += mass * law.mu(c, a_prime);
      den += mass;
    }
    if (!(den > 0.0)) fail(ErrorKind::EmptyConditioningSet, "the conditioning set has zero probability");
    *q = den;
    return num / den;
  };
  VonMisesCheck out;
  double q_p = 0.0, q_f = 0.0;
  out.theta_p = theta(p, &q_p);
  out.theta_f = theta(f, &q_f);

  // E_P D_F by enumeration over (x, A, Y); Y enters linearly so mu_P replaces it.
  double mean = 0.0;
  for (Index c = 0; c < cells; ++c) {
    if (w[c] == 0.0) continue;
    const double px = p.probabilities[c];
    for (Index b = 0; b < p.pi.cols(); ++b) {
      const double pb = px * p.pi(c, b);
      if (pb == 0.0) continue;
      double d = 0.0;
      if (b == a_prime) d += f.pi(c, a) / f.pi(c, a_prime) * (p.mu(c, a_prime) - f.mu(c, a_prime));
      if (b == a) d += f.mu(c, a_prime) - out.theta_f;
      mean += pb * d / q_f;
    }
  }
  out.eif_mean = mean;

  double cross = 0.0;
  for (Index c = 0; c < cells; ++c) {
    if (w[c] == 0.0) continue;
    cross += p.probabilities[c] * p.pi(c, a_prime) * (p.mu(c, a_prime) - f.mu(c, a_prime)) *
             (f.pi(c, a) / f.pi(c, a_prime) - p.pi(c, a) / p.pi(c, a_prime));
  }
  out.remainder = cross / q_f + (out.theta_f - out.theta_p) * (q_f - q_p) / q_f;
  out.discrepancy = std::abs((out.theta_f - out.theta_p) - (-out.eif_mean + out.remainder));
  return out;
}

double check_von_mises_remainder(const DgpSpec& dgp, const DiscreteLaw& perturbed, const XCondition& x_condition) {
  if (!dgp.is_discrete()) fail(ErrorKind::NonDiscreteDgp, "the von Mises check needs a discrete DGP");
  const DiscreteLaw law = discrete_law(dgp);
  double worst = 0.0;
  for (int a = 0; a < dgp.player_count; ++a)
    for (int b = 0; b < dgp.player_count; ++b)
      worst = std::max(worst, von_mises_check(law, perturbed, a, b, x_condition).discrepancy);
  return worst;
}

namespace {

DgpSpec four_cell(std::string name, double pi_low, double pi_high) {
  DgpSpec d;
  d.name = std::move(name);
  d.player_count = 2;
  d.covariate_names = {"x"};
  DiscreteCovariates cov;
  cov.cells = {Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, 1.0)};
  cov.probabilities = Eigen::Vector2d(0.5, 0.5);
  d.covariates = cov;
  CellTable pi(2, 2);
  pi << pi_low, 1.0 - pi_low, pi_high, 1.0 - pi_high;
  d.propensity = pi;
  CellTable mu(2, 2);
  mu << 0.6, 0.4, 0.8, 0.6;
  d.outcome = mu;
  return d;
}

DgpSpec ten_cell() {
  DgpSpec d;
  d.name = "ten-cell";
  d.player_count = 5;
  DiscreteCovariates cov;
  for (int c = 0; c < 10; ++c) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(9);
    if (c > 0) x[c - 1] = 1.0;
    cov.cells.push_back(x);
  }
  for (int j = 1; j <= 9; ++j) d.covariate_names.push_back("c" + std::to_string(j));
  cov.probabilities = Eigen::VectorXd::Constant(10, 0.1);
  d.covariates = cov;
  CellTable pi(10, 5), mu(10, 5);
  const double base[5] = {2, 3, 4, 5, 6};
  for (int c = 0; c < 10; ++c) {
    for (int a = 0; a < 5; ++a) {
      pi(c, a) = base[(a + c) % 5] / 20.0;
      mu(c, a) = (2 + (3 * a + 7 * c) % 7) / 10.0;
    }
  }
  d.propensity = pi;
  d.outcome = mu;
  return d;
}

DgpSpec kicker() {
  DgpSpec d;
  d.name = "kicker";
  d.player_count = 4;
  d.covariate_names = {"distance", "wind"};
  ContinuousCovariates cov;
  cov.components = {{CovariateComponent::Kind::Uniform, 18.0, 60.0}, {CovariateComponent::Kind::Uniform, 0.0, 20.0}};
  d.covariates = cov;
  LinearScores pi;
  pi.intercept = Eigen::Vector4d(0.0, 0.2, -0.1, 0.1);
  pi.slope.resize(4, 2);
  pi.slope << 0.03, 0.0, 0.01, -0.02, -0.01, 0.02, -0.03, 0.0;
  d.propensity = pi;
  LinearScores mu;
  mu.intercept = Eigen::Vector4d(5.6, 5.3, 5.0, 5.4);
  mu.slope.resize(4, 2);
  mu.slope << -0.095, -0.02, -0.090, -0.03, -0.085, -0.02, -0.100, -0.025;
  mu.interaction = Eigen::Vector4d::Constant(-0.0006);
  d.outcome = mu;
  return d;
}

}  // namespace

DgpSpec builtin_fixture(std::string_view name) {
  if (name == "four-cell") return four_cell("four-cell", 0.2, 0.8);
  if (name == "four-cell-balanced") return four_cell("four-cell-balanced", 0.5, 0.5);
  if (name == "ten-cell") return ten_cell();
  if (name == "kicker") return kicker();
  if (name == "positivity-weak") return four_cell("positivity-weak", 0.01, 0.5);
  if (name == "positivity-strong") return four_cell("positivity-strong", 0.3, 0.5);
  fail(ErrorKind::Config, "unknown fixture '" + std::string(name) + "'");
}

std::vector<std::string> builtin_fixture_names() {
  return {"four-cell", "four-cell-balanced", "ten-cell", "kicker", "positivity-weak", "positivity-strong"};
}

}  // namespace playereval
