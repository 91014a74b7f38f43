#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "playereval/crossfit.hpp"
#include "playereval/error.hpp"
#include "playereval/simulation.hpp"

using namespace playereval;

namespace {

bool partitions(const FoldAssignment& f, Index n) {
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (int j = 0; j < f.fold_count; ++j) {
    for (Index i : f.validation[static_cast<std::size_t>(j)]) {
      if (f.fold_of[static_cast<std::size_t>(i)] != j) return false;
      ++seen[static_cast<std::size_t>(i)];
    }
    if (f.training[static_cast<std::size_t>(j)].size() + f.validation[static_cast<std::size_t>(j)].size() !=
        static_cast<std::size_t>(n))
      return false;
  }
  return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
}

/// Whether any two-fold assignment with both folds non-empty keeps every
/// player in both training sets.
bool some_assignment_covers(const std::vector<int>& players, int m) {
  const int n = static_cast<int>(players.size());
  for (int mask = 1; mask < (1 << n) - 1; ++mask) {
    bool ok = true;
    for (int a = 0; a < m && ok; ++a) {
      bool in0 = false, in1 = false;
      for (int i = 0; i < n; ++i)
        if (players[static_cast<std::size_t>(i)] == a) ((mask >> i) & 1 ? in1 : in0) = true;
      ok = in0 && in1;
    }
    if (ok) return true;
  }
  return false;
}

Eigen::VectorXi to_vec(const std::vector<int>& v) {
  return Eigen::Map<const Eigen::VectorXi>(v.data(), static_cast<Index>(v.size()));
}

DgpSpec constant_outcome_dgp() {
  DgpSpec d = builtin_fixture("four-cell");
  Eigen::MatrixXd mu = Eigen::MatrixXd::Constant(2, 2, 0.7);
  d.outcome = CellTable(mu);
  return d;
}

NuisanceLearners small_library(std::uint64_t seed) {
  NuisanceLearners l;
  l.outcome = {{LearnerKind::Mean}, {LearnerKind::Logistic}};
  l.marginal_outcome = l.outcome;
  l.propensity = l.outcome;
  l.stack_folds = 3;
  l.seed = seed;
  return l;
}

}  // namespace

TEST_CASE("single player, ten records, five folds") {
  const Eigen::VectorXi players = Eigen::VectorXi::Zero(10);
  const auto f = make_folds(players, 1, 5, 42);
  CHECK(partitions(f, 10));
  for (const auto& v : f.validation) CHECK(v.size() == 2);
  const auto g = make_folds(players, 1, 5, 42);
  CHECK(f.fold_of == g.fold_of);
}

TEST_CASE("fold sizes differ by at most one and every training set has every player") {
  std::vector<int> p;
  for (int i = 0; i < 103; ++i) p.push_back(i % 7 == 0 ? 2 : i % 3 == 0 ? 1 : 0);
  const auto f = make_folds(to_vec(p), 3, 5, 1);
  CHECK(partitions(f, 103));
  std::size_t lo = 1000, hi = 0;
  for (const auto& v : f.validation) {
    lo = std::min(lo, v.size());
    hi = std::max(hi, v.size());
  }
  CHECK(hi - lo <= 1);
  for (const auto& t : f.training) {
    std::vector<bool> has(3, false);
    for (Index i : t) has[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])] = true;
    CHECK((has[0] && has[1] && has[2]));
  }
}

TEST_CASE("coverage rule agrees with enumeration on tiny datasets") {
  for (const std::vector<int>& p : {std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, std::vector<int>{0, 0, 1, 1},
                                    std::vector<int>{0, 1, 0, 1}}) {
    const bool feasible = some_assignment_covers(p, 2);
    bool built = true;
    try {
      const auto f = make_folds(to_vec(p), 2, 2, 3);
      CHECK(partitions(f, static_cast<Index>(p.size())));
      for (const auto& t : f.training) {
        bool in0 = false, in1 = false;
        for (Index i : t) (p[static_cast<std::size_t>(i)] == 0 ? in0 : in1) = true;
        CHECK((in0 && in1));
      }
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InsufficientPlayerData);
      const int lonely = std::count(p.begin(), p.end(), 0) < 2 ? 0 : 1;
      CHECK(std::string(e.what()).find("player " + std::to_string(lonely)) != std::string::npos);
      built = false;
    }
    CHECK(built == feasible);
  }
}

TEST_CASE("fold construction errors") {
  CHECK_THROWS_AS(make_folds(Eigen::VectorXi::Zero(10), 1, 1, 0), Error);
  CHECK_THROWS_AS(make_folds(Eigen::VectorXi::Zero(3), 1, 5, 0), Error);
  CHECK(default_fold_count(4999) == 5);
  CHECK(default_fold_count(5000) == 10);
}

TEST_CASE("constant outcome is recovered out of sample") {
  const DgpSpec dgp = constant_outcome_dgp();
  const Dataset data = generate(dgp, 500, 17);
  const auto folds = make_folds(data.players(), 2, 5, 4);
  const auto nu = fit_nuisances(data, folds, small_library(8), {});
  CHECK((nu.mu.array() - 0.7).abs().maxCoeff() < 0.05);
  CHECK((nu.pi.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-10);
  CHECK(nu.mu.minCoeff() >= 1e-6);
  CHECK(nu.mu.maxCoeff() <= 1 - 1e-6);
  for (const auto& fm : nu.fold_marginals) {
    CHECK(std::abs(fm.player.sum() - 1.0) < 1e-10);
    CHECK(fm.player.minCoeff() > 0.0);
  }
}

TEST_CASE("predictions for a fold ignore that fold's outcomes") {
  const DgpSpec dgp = builtin_fixture("four-cell");
  const Dataset data = generate(dgp, 300, 5);
  const auto folds = make_folds(data.players(), 2, 3, 6);
  const auto nu = fit_nuisances(data, folds, small_library(2), {});

  Eigen::VectorXi y = data.outcomes();
  for (Index i : folds.validation[0]) y(i) = 1 - y(i);
  const Dataset flipped(data.covariates(), data.players(), y, data.player_labels(), data.covariate_names());
  const auto nu2 = fit_nuisances(flipped, folds, small_library(2), {});
  for (Index i : folds.validation[0]) {
    CHECK(nu.mu.row(i) == nu2.mu.row(i));
    CHECK(nu.m_bar(i) == nu2.m_bar(i));
  }
  bool changed = false;
  for (Index i : folds.validation[1]) changed = changed || nu.m_bar(i) != nu2.m_bar(i);
  CHECK(changed);
}

TEST_CASE("nuisances are reproducible and scheduling invariant") {
  const Dataset data = generate(builtin_fixture("kicker"), 400, 12);
  const auto folds = make_folds(data.players(), data.player_count(), 4, 3);
  auto serial = small_library(99);
  auto threaded = serial;
  threaded.parallel = true;
  const auto a = fit_nuisances(data, folds, serial, {});
  const auto b = fit_nuisances(data, folds, serial, {});
  const auto c = fit_nuisances(data, folds, threaded, {});
  CHECK(a.mu == b.mu);
  CHECK(a.mu == c.mu);
  CHECK(a.pi == c.pi);
  CHECK(a.m_bar == c.m_bar);
}

TEST_CASE("tower property at exact nuisances") {
  const DgpSpec dgp = builtin_fixture("ten-cell");
  const Dataset data = generate(dgp, 1000, 3);
  const auto folds = make_folds(data.players(), dgp.player_count, 5, 3);
  const auto nu = exact_nuisances(dgp, data, folds);
  const Eigen::VectorXd tower = (nu.mu.array() * nu.pi.array()).rowwise().sum();
  CHECK((tower - nu.m_bar).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("outcome design") {
  Eigen::MatrixXd x(3, 1);
  x << 1, 2, 3;
  Eigen::VectorXi a(3);
  a << 0, 2, 1;
  const Eigen::MatrixXd f = outcome_features(x, a, 3);
  CHECK(f.cols() == 3);
  CHECK(f(1, 2) == 1.0);
  CHECK(f(2, 1) == 1.0);
  CHECK(f.row(0).tail(2).sum() == 0.0);
}
