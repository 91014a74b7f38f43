#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <boost/math/distributions/normal.hpp>
#include <map>
#include <random>

#include "playereval/error.hpp"
#include "playereval/estimators.hpp"
#include "playereval/simulation.hpp"
#include "playereval/stats.hpp"

using namespace playereval;

namespace {

NuisanceMatrices make_nuisances(const Dataset& data, const FoldAssignment& folds, Eigen::MatrixXd mu,
                                Eigen::MatrixXd pi, std::optional<Eigen::VectorXd> m_bar = std::nullopt) {
  NuisanceMatrices nu;
  nu.m_bar = m_bar ? *m_bar : Eigen::VectorXd((mu.array() * pi.array()).rowwise().sum());
  nu.mu = std::move(mu);
  nu.pi = std::move(pi);
  for (const auto& t : folds.training) nu.fold_marginals.push_back(empirical_marginals(data, t, {}));
  nu.pooled_marginals = empirical_marginals(data, {});
  return nu;
}

Dataset from_columns(const std::vector<double>& x, const std::vector<int>& a, const std::vector<int>& y, int m) {
  std::vector<AttemptRecord> recs;
  for (std::size_t i = 0; i < x.size(); ++i) recs.push_back({Eigen::VectorXd::Constant(1, x[i]), a[i], y[i]});
  return Dataset::from_records(recs, simulated_player_labels(m), {"x"});
}

/// The three influence functions written out term by term, X' = everything,
/// P(a) the sample frequency.
Eigen::VectorXd reference_eif(const Dataset& d, EstimandKind kind, int a, const Eigen::MatrixXd& mu,
                              const Eigen::MatrixXd& pi, const Eigen::VectorXd& m_bar, double psi) {
  const Index n = d.size();
  const int m = d.player_count();
  double pa = 0.0;
  for (Index i = 0; i < n; ++i) pa += d.players()(i) == a ? 1.0 : 0.0;
  pa /= static_cast<double>(n);
  Eigen::VectorXd out(n);
  for (Index i = 0; i < n; ++i) {
    const int ai = d.players()(i);
    const double y = d.outcomes()(i);
    const double is_a = ai == a ? 1.0 : 0.0;
    switch (kind) {
      case EstimandKind::Direct:
        out(i) = is_a / pi(i, a) * (y - mu(i, a)) + mu(i, a) - psi;
        break;
      case EstimandKind::Indirect:
        out(i) = pi(i, a) / pa * (y - m_bar(i)) + is_a / pa * (m_bar(i) - psi);
        break;
      case EstimandKind::RandomReplacement: {
        double avg = 0.0;
        for (int b = 0; b < m; ++b) avg += mu(i, b) / m;
        out(i) = (1.0 / m * pi(i, a) / pi(i, ai) * (y - mu(i, ai)) + is_a * (avg - psi)) / pa;
        break;
      }
    }
  }
  return out;
}

double z_of(double level) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + level / 2.0);
}

/// Random nuisances with pi rows on the simplex, bounded away from zero.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> random_nuisances(Index n, int m, std::mt19937_64& rng) {
  Eigen::MatrixXd mu(n, m), pi(n, m);
  for (Index i = 0; i < n; ++i) {
    for (int b = 0; b < m; ++b) {
      mu(i, b) = 0.05 + 0.9 * uniform01(rng);
      pi(i, b) = 0.1 + uniform01(rng);
    }
    pi.row(i) /= pi.row(i).sum();
  }
  return {mu, pi};
}

/// Sample cell frequencies used as nuisances: a saturated fit on discrete data.
NuisanceMatrices saturated(const Dataset& d, const FoldAssignment& folds) {
  const int m = d.player_count();
  std::map<double, std::pair<Eigen::VectorXd, Eigen::VectorXd>> cells;  // x -> (count, successes) per player
  for (Index i = 0; i < d.size(); ++i) {
    auto& c = cells.try_emplace(d.covariates()(i, 0), Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(m)).first->second;
    c.first(d.players()(i)) += 1.0;
    c.second(d.players()(i)) += d.outcomes()(i);
  }
  Eigen::MatrixXd mu(d.size(), m), pi(d.size(), m);
  Eigen::VectorXd m_bar(d.size());
  for (Index i = 0; i < d.size(); ++i) {
    const auto& c = cells.at(d.covariates()(i, 0));
    for (int b = 0; b < m; ++b) {
      mu(i, b) = c.second(b) / c.first(b);
      pi(i, b) = c.first(b) / c.first.sum();
    }
    m_bar(i) = c.second.sum() / c.first.sum();
  }
  return make_nuisances(d, folds, mu, pi, m_bar);
}

const EstimandKind kAllKinds[] = {EstimandKind::Direct, EstimandKind::Indirect, EstimandKind::RandomReplacement};

}  // namespace

TEST_CASE("constant outcome regression gives a constant plug-in") {
  const Dataset d = from_columns({0, 1, 0, 1, 0, 1}, {0, 0, 1, 1, 0, 1}, {1, 0, 0, 1, 1, 0}, 2);
  const auto folds = make_folds(d.players(), 2, 2, 1);
  const auto nu = make_nuisances(d, folds, Eigen::MatrixXd::Constant(6, 2, 0.5), Eigen::MatrixXd::Constant(6, 2, 0.5));
  for (auto kind : kAllKinds)
    for (int a : {0, 1}) CHECK(estimate_substitution(d, {kind, a, {}, std::nullopt}, nu).psi == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("worked four-cell values at exact nuisances") {
  for (const auto& [name, direct, indirect, rand] :
       {std::tuple{"four-cell-balanced", 0.7, 0.6, 0.6}, std::tuple{"four-cell", 0.7, 0.696, 0.66}}) {
    const DgpSpec dgp = builtin_fixture(name);
    const Dataset pop = population_dataset(dgp, 1000);
    const auto folds = make_folds(pop.players(), 2, 5, 1);
    const auto nu = exact_nuisances(dgp, pop, folds);
    CHECK(estimate_substitution(pop, {EstimandKind::Direct, 0, {}, std::nullopt}, nu).psi == doctest::Approx(direct).epsilon(1e-12));
    CHECK(estimate_substitution(pop, {EstimandKind::Indirect, 0, {}, std::nullopt}, nu).psi == doctest::Approx(indirect).epsilon(1e-12));
    CHECK(estimate_substitution(pop, {EstimandKind::RandomReplacement, 0, {}, std::nullopt}, nu).psi == doctest::Approx(rand).epsilon(1e-12));
  }
}

TEST_CASE("EIF matches the term-by-term formulas") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const int m = 2 + rep % 3;
    const Index n = 40;
    std::vector<double> x;
    std::vector<int> a, y;
    for (Index i = 0; i < n; ++i) {
      x.push_back(uniform01(rng));
      a.push_back(static_cast<int>(i % m));
      y.push_back(uniform01(rng) < 0.6 ? 1 : 0);
    }
    const Dataset d = from_columns(x, a, y, m);
    const auto folds = make_folds(d.players(), m, 2, 4);
    const auto [mu, pi] = random_nuisances(n, m, rng);
    Eigen::VectorXd m_bar(n);
    for (Index i = 0; i < n; ++i) m_bar(i) = 0.1 + 0.8 * uniform01(rng);
    const auto nu = make_nuisances(d, folds, mu, pi, m_bar);
    for (auto kind : kAllKinds) {
      const int focal = rep % m;
      const EstimandSpec spec{kind, focal, {}, std::nullopt};
      const double psi = 0.3 + 0.01 * rep;
      const Eigen::VectorXd got = compute_eif(d, spec, nu, psi);
      const Eigen::VectorXd want = reference_eif(d, kind, focal, mu, pi, m_bar, psi);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("indirect EIF with marginal propensity and mean outcome is centred") {
  const Dataset d = from_columns({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {0, 1, 0, 1, 1, 0, 1, 1, 0, 1}, {1, 0, 0, 1, 1, 1, 0, 1, 1, 0}, 2);
  const auto folds = make_folds(d.players(), 2, 2, 1);
  const double pa = 0.4;
  const double ybar = 0.6;
  Eigen::MatrixXd pi(10, 2);
  pi.col(0).setConstant(pa);
  pi.col(1).setConstant(1 - pa);
  const auto nu = make_nuisances(d, folds, Eigen::MatrixXd::Constant(10, 2, ybar), pi, Eigen::VectorXd::Constant(10, ybar));
  const EstimandSpec spec{EstimandKind::Indirect, 0, {}, std::nullopt};
  const double psi = estimate_substitution(d, spec, nu).psi;
  CHECK(psi == doctest::Approx(ybar));
  CHECK(std::abs(compute_eif(d, spec, nu, psi).mean()) < 1e-15);
}

TEST_CASE("random-replacement EIF is mean zero at the truth") {
  const DgpSpec dgp = builtin_fixture("four-cell");
  const Dataset d = generate(dgp, 100000, 77);
  const auto folds = make_folds(d.players(), 2, 5, 1);
  const auto nu = exact_nuisances(dgp, d, folds);
  const Eigen::VectorXd eif = compute_eif(d, {EstimandKind::RandomReplacement, 0, {}, std::nullopt}, nu, 0.66);
  const double sd = std::sqrt((eif.array() - eif.mean()).square().mean());
  CHECK(std::abs(eif.mean()) < 3.0 * sd / std::sqrt(100000.0));
}

TEST_CASE("saturated fits make all three estimators agree") {
  const DgpSpec dgp = builtin_fixture("ten-cell");
  const Dataset d = generate(dgp, 3000, 8);
  const auto folds = make_folds(d.players(), dgp.player_count, 5, 2);
  // Collapse the one-hot columns into a single cell code.
  std::map<std::vector<double>, int> key;
  std::vector<double> cell;
  for (Index i = 0; i < d.size(); ++i) {
    std::vector<double> row;
    for (Index j = 0; j < d.dimension(); ++j) row.push_back(d.covariates()(i, j));
    cell.push_back(key.try_emplace(row, static_cast<int>(key.size())).first->second);
  }
  std::vector<int> a(d.players().data(), d.players().data() + d.size());
  std::vector<int> y(d.outcomes().data(), d.outcomes().data() + d.size());
  const Dataset flat = from_columns(cell, a, y, dgp.player_count);
  const NuisanceMatrices nu = saturated(flat, folds);
  for (auto kind : kAllKinds) {
    for (int focal = 0; focal < dgp.player_count; ++focal) {
      const EstimandSpec spec{kind, focal, {}, std::nullopt};
      const auto sub = estimate_substitution(flat, spec, nu);
      const auto one = estimate_onestep(flat, spec, nu);
      const auto tmle = estimate_tmle(flat, spec, nu, folds);
      CHECK(std::abs(one.psi - sub.psi) < 1e-10);
      CHECK(std::abs(tmle.psi - sub.psi) < 1e-10);
      for (double e : tmle.epsilons) CHECK(std::abs(e) < 1e-10);
    }
  }
}

TEST_CASE("one-step removes a uniform outcome bias") {
  // Two covariate cells, alternating players, exact constant propensity 0.5.
  // Player 0 succeeds half the time in both cells; the outcome model says 0.6.
  const Dataset d = from_columns({0, 0, 0, 0, 1, 1, 1, 1}, {0, 1, 0, 1, 0, 1, 0, 1}, {1, 0, 0, 1, 1, 1, 0, 0}, 2);
  const auto folds = make_folds(d.players(), 2, 2, 1);
  Eigen::MatrixXd mu(8, 2);
  mu.col(0).setConstant(0.6);
  mu.col(1).setConstant(0.55);
  const auto nu = make_nuisances(d, folds, mu, Eigen::MatrixXd::Constant(8, 2, 0.5));
  const EstimandSpec spec{EstimandKind::Direct, 0, {}, std::nullopt};
  const auto sub = estimate_substitution(d, spec, nu);
  const auto one = estimate_onestep(d, spec, nu);
  CHECK(sub.psi == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(one.psi == doctest::Approx(0.5).epsilon(1e-14));
  const Eigen::VectorXd ref = reference_eif(d, EstimandKind::Direct, 0, mu, nu.pi, nu.m_bar, sub.psi);
  CHECK(one.psi == doctest::Approx(sub.psi + ref.mean()).epsilon(1e-14));
}

TEST_CASE("one-step can leave the unit interval while TMLE cannot") {
  const Dataset d = from_columns({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {0, 0, 0, 0, 0, 1, 1, 1, 1, 1}, {1, 0, 0, 0, 0, 1, 0, 1, 0, 1}, 2);
  const auto folds = make_folds(d.players(), 2, 2, 1);
  Eigen::MatrixXd mu(10, 2);
  mu.col(0).setConstant(0.02);
  mu.col(1).setConstant(0.5);
  Eigen::MatrixXd pi(10, 2);
  pi.col(0).setConstant(0.05);
  pi.col(1).setConstant(0.95);
  const auto nu = make_nuisances(d, folds, mu, pi);
  const EstimandSpec spec{EstimandKind::Direct, 0, {}, std::nullopt};
  const auto one = estimate_onestep(d, spec, nu);
  // 0.02 + (1/10) * (1/0.05) * (0.98 - 4 * 0.02)
  CHECK(one.psi == doctest::Approx(1.82));
  CHECK(one.has(kFlagOutsideUnitInterval));
  const auto tmle = estimate_tmle(d, spec, nu, folds);
  CHECK(tmle.psi >= 0.0);
  CHECK(tmle.psi <= 1.0);
  CHECK_FALSE(tmle.has(kFlagOutsideUnitInterval));
  CHECK(std::abs(tmle.eif_mean()) <= 1e-6);
}

TEST_CASE("TMLE solves the EIF equation on fitted nuisances") {
  const DgpSpec dgp = builtin_fixture("kicker");
  const Dataset d = generate(dgp, 1500, 31);
  const auto folds = make_folds(d.players(), dgp.player_count, 5, 4);
  NuisanceLearners learners;
  learners.outcome = default_simulation_library();
  learners.marginal_outcome = learners.outcome;
  learners.propensity = learners.outcome;
  learners.seed = 5;
  const auto nu = fit_nuisances(d, folds, learners, {});
  for (auto kind : kAllKinds) {
    for (int a = 0; a < dgp.player_count; ++a) {
      const auto r = estimate_tmle(d, {kind, a, {}, std::nullopt}, nu, folds);
      CHECK(std::abs(r.eif_mean()) <= 1e-6);
      CHECK_FALSE(r.has(kFlagTargetingIncomplete));
      CHECK(r.psi >= 0.0);
      CHECK(r.psi <= 1.0);
      CHECK(r.ci.first < r.psi);
      CHECK(r.ci.second - r.psi == doctest::Approx(r.psi - r.ci.first).epsilon(1e-12));
    }
  }
  SUBCASE("train-fold fluctuation reports when the equation is not solved") {
    const EstimatorOptions train_fold{false, 0.95};
    for (auto kind : kAllKinds) {
      const auto r = estimate_tmle(d, {kind, 1, {}, std::nullopt}, nu, folds, train_fold);
      CHECK(r.has(kFlagTargetingIncomplete) == (std::abs(r.eif_mean()) > 1e-6));
      CHECK(r.epsilons.size() >= static_cast<std::size_t>(folds.fold_count));
    }
  }
}

TEST_CASE("TMLE recovers the random-replacement oracle") {
  const DgpSpec dgp = builtin_fixture("four-cell");
  const Dataset d = generate(dgp, 100000, 13);
  const auto folds = make_folds(d.players(), 2, 5, 3);
  const auto nu = exact_nuisances(dgp, d, folds);
  const auto r = estimate_tmle(d, {EstimandKind::RandomReplacement, 0, {}, std::nullopt}, nu, folds);
  CHECK(std::abs(r.psi - 0.66) < 3.0 * r.se);

  SUBCASE("variance matches the exact second moment") {
    for (auto kind : kAllKinds) {
      const EstimandSpec spec{kind, 0, {}, std::nullopt};
      const auto t = estimate_tmle(d, spec, nu, folds);
      const double ratio = t.se * t.se * 100000.0 / eif_second_moment(dgp, spec);
      CHECK(std::abs(ratio - 1.0) < 0.05);
    }
  }
}

TEST_CASE("Wald intervals") {
  Eigen::VectorXd eif(4);
  eif << 0.2, -0.2, 0.2, -0.2;
  const auto ci = wald_ci(0.5, eif, 4, 0.95);
  CHECK(ci.first == doctest::Approx(0.5 - z_of(0.95) * 0.1).epsilon(1e-9));
  CHECK(ci.second == doctest::Approx(0.5 + z_of(0.95) * 0.1).epsilon(1e-9));
  CHECK(ci.first == doctest::Approx(0.30400).epsilon(1e-5));
  const auto wide = wald_ci(0.5, eif, 4, 0.999);
  CHECK(wide.second - 0.5 == doctest::Approx(0.3290527).epsilon(1e-6));
  const auto narrow = wald_ci(0.5, eif, 4, 1e-12);
  CHECK(std::abs(narrow.second - 0.5) < 1e-10);
  double last = 0.0;
  for (double level : {0.5, 0.8, 0.9, 0.95, 0.99}) {
    const auto c = wald_ci(0.5, eif, 4, level);
    CHECK(c.second - c.first > last);
    last = c.second - c.first;
  }
  try {
    wald_ci(0.5, Eigen::VectorXd::Constant(4, 0.3), 4, 0.95);
    FAIL("expected DegenerateEif");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateEif);
  }
}

TEST_CASE("fluctuation solver") {
  std::mt19937_64 rng(3);
  const Index n = 200;
  Eigen::VectorXd offset(n), h(n), y(n);
  for (Index i = 0; i < n; ++i) {
    offset(i) = 2.0 * uniform01(rng) - 1.0;
    h(i) = uniform01(rng) * 2.0;
    y(i) = uniform01(rng) < expit(offset(i) + 0.4 * h(i)) ? 1.0 : 0.0;
  }
  const double eps = solve_fluctuation(offset, h, y);
  const Eigen::ArrayXd p = (offset.array() + eps * h.array()).unaryExpr([](double v) { return expit(v); });
  CHECK(std::abs((h.array() * (y.array() - p)).sum()) < 1e-8);

  // Score is monotone in epsilon, so a coarse bracket confirms the root.
  const auto score = [&](double e) {
    return (h.array() * (y.array() - (offset.array() + e * h.array()).unaryExpr([](double v) { return expit(v); }))).sum();
  };
  CHECK(score(eps - 1e-4) > 0.0);
  CHECK(score(eps + 1e-4) < 0.0);

  try {
    solve_fluctuation(offset, h, Eigen::VectorXd::Ones(n));
    FAIL("expected FluctuationDiverged");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::FluctuationDiverged);
  }
}

TEST_CASE("contrasts") {
  SUBCASE("shared outcome function gives zero") {
    DgpSpec dgp = builtin_fixture("four-cell");
    Eigen::MatrixXd mu(2, 2);
    mu << 0.6, 0.6, 0.8, 0.8;
    dgp.outcome = CellTable(mu);
    CHECK(std::abs(oracle_values(dgp).rand_contrast(0)) < 1e-14);
    const Dataset d = generate(dgp, 10000, 4);
    const auto folds = make_folds(d.players(), 2, 5, 4);
    const auto nu = exact_nuisances(dgp, d, folds);
    const auto c = estimate_contrast(d, {EstimandKind::RandomReplacement, 0, {}, std::nullopt}, nu, folds);
    CHECK(std::abs(c.delta) < 3.0 * c.se);
    CHECK(c.se > 0.0);
  }
  SUBCASE("better player by a tenth under uniform assignment") {
    DgpSpec dgp = builtin_fixture("four-cell-balanced");
    Eigen::MatrixXd mu(2, 2);
    mu << 0.7, 0.6, 0.5, 0.4;
    dgp.outcome = CellTable(mu);
    CHECK(oracle_values(dgp).rand_contrast(0) == doctest::Approx(0.05).epsilon(1e-12));
  }
  SUBCASE("tiny conditioning sets are flagged") {
    std::vector<double> x;
    std::vector<int> a, y;
    for (int i = 0; i < 60; ++i) {
      x.push_back(i % 2);
      a.push_back(i < 3 ? 0 : 1);
      y.push_back(i % 3 == 0 ? 1 : 0);
    }
    const Dataset d = from_columns(x, a, y, 2);
    const auto folds = make_folds(d.players(), 2, 2, 1);
    Eigen::MatrixXd pi(60, 2);
    pi.col(0).setConstant(0.05);
    pi.col(1).setConstant(0.95);
    const auto nu = make_nuisances(d, folds, Eigen::MatrixXd::Constant(60, 2, 0.35), pi);
    const auto c = estimate_contrast(d, {EstimandKind::Indirect, 0, {}, std::nullopt}, nu, folds);
    CHECK(c.conditioning_size == 3);
    CHECK((c.flags & kFlagSmallSample) != 0);
    CHECK(std::isfinite(c.se));
  }
}

TEST_CASE("direct ranking ignores how other players are labelled") {
  const DgpSpec dgp = builtin_fixture("ten-cell");
  const Dataset d = generate(dgp, 2000, 6);
  const auto folds = make_folds(d.players(), dgp.player_count, 5, 6);
  const auto nu = exact_nuisances(dgp, d, folds);
  // Swap the labels of players 2 and 4.
  const std::vector<int> perm{0, 1, 4, 3, 2};
  Eigen::VectorXi players(d.size());
  for (Index i = 0; i < d.size(); ++i) players(i) = perm[static_cast<std::size_t>(d.players()(i))];
  const Dataset swapped(d.covariates(), players, d.outcomes(), d.player_labels(), d.covariate_names());
  NuisanceMatrices nu2 = nu;
  for (int b = 0; b < 5; ++b) {
    nu2.mu.col(perm[static_cast<std::size_t>(b)]) = nu.mu.col(b);
    nu2.pi.col(perm[static_cast<std::size_t>(b)]) = nu.pi.col(b);
  }
  nu2.fold_marginals.clear();
  for (const auto& t : folds.training) nu2.fold_marginals.push_back(empirical_marginals(swapped, t, {}));
  nu2.pooled_marginals = empirical_marginals(swapped, {});
  for (int a : {0, 1}) {
    const auto before = estimate_tmle(d, {EstimandKind::Direct, a, {}, std::nullopt}, nu, folds);
    const auto after = estimate_tmle(swapped, {EstimandKind::Direct, a, {}, std::nullopt}, nu2, folds);
    CHECK(before.psi == doctest::Approx(after.psi).epsilon(1e-12));
  }
}

TEST_CASE("covariate restriction") {
  const DgpSpec dgp = builtin_fixture("four-cell");
  const Dataset pop = population_dataset(dgp, 1000);
  const XCondition only_one{{CovariateConstraint::equal_to(0, 1.0)}};
  const auto folds = make_folds(pop.players(), 2, 5, 1);
  const auto nu = exact_nuisances(dgp, pop, folds, only_one);
  for (auto kind : kAllKinds) {
    const EstimandSpec spec{kind, 0, only_one, std::nullopt};
    const double truth = oracle_exact(dgp, spec);
    CHECK(estimate_tmle(pop, spec, nu, folds).psi == doctest::Approx(truth).epsilon(1e-10));
    CHECK(estimate_onestep(pop, spec, nu).psi == doctest::Approx(truth).epsilon(1e-10));
  }
  CHECK(oracle_exact(dgp, {EstimandKind::Direct, 0, only_one, std::nullopt}) == doctest::Approx(0.8));
}

TEST_CASE("estimator names round trip") {
  for (auto k : {EstimatorKind::Substitution, EstimatorKind::OneStep, EstimatorKind::Tmle})
    CHECK(parse_estimator_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_estimator_kind("bootstrap"), Error);
  CHECK(flag_names(kFlagOutsideUnitInterval | kFlagSmallSample).size() == 2);
}
