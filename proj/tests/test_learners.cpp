#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "playereval/error.hpp"
#include "playereval/learners.hpp"
#include "playereval/stats.hpp"

using namespace playereval;

namespace {

Eigen::VectorXi ints(std::initializer_list<int> v) {
  Eigen::VectorXi out(static_cast<Index>(v.size()));
  Index i = 0;
  for (int x : v) out(i++) = x;
  return out;
}


/// Intercept-only Bernoulli MLE by plain Newton on the log-likelihood.
double newton_intercept(const Eigen::VectorXi& y) {
  double b = 0.0;
  for (int it = 0; it < 100; ++it) {
    double score = 0.0, info = 0.0;
    for (Index i = 0; i < y.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-b));
      score += y(i) - p;
      info += p * (1 - p);
    }
    b += score / info;
  }
  return b;
}

}  // namespace

TEST_CASE("mean learner") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 1);
  CHECK(fit_mean(ints({1, 1, 0, 0})).predict(x)(0) == doctest::Approx(0.5));
  CHECK(fit_mean(ints({1, 0, 0, 0})).predict(x)(2) == doctest::Approx(0.25));
  CHECK(fit_mean(ints({1, 1, 1, 1})).predict(x)(3) == 1.0 - 1e-6);
  CHECK_THROWS_AS(fit_mean(Eigen::VectorXi(0)), Error);
}

TEST_CASE("logistic on symmetric data") {
  Eigen::MatrixXd x(4, 1);
  x << -1, 1, -1, 1;
  LogisticOptions opt;
  opt.ridge = 1e-4;
  const auto model = fit_logistic(x, ints({0, 1, 0, 1}), opt);
  const auto& fit = std::get<BinaryLearnerModel::LogisticFit>(model.parameters());
  CHECK(std::abs(fit.intercept) < 1e-6);
  CHECK(fit.coefficients(0) > 0.0);
  CHECK(fit.max_abs_score < 1e-9);
}

TEST_CASE("zero-variance feature reduces to the intercept") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(10, 1, 3.0);
  const Eigen::VectorXi y = ints({1, 1, 1, 0, 0, 0, 0, 0, 0, 0});
  LogisticOptions opt;
  opt.ridge = 0.0;
  const auto model = fit_logistic(x, y, opt);
  const auto& fit = std::get<BinaryLearnerModel::LogisticFit>(model.parameters());
  CHECK(fit.intercept == doctest::Approx(newton_intercept(y)).epsilon(1e-9));
  CHECK(fit.intercept == doctest::Approx(std::log(0.3 / 0.7)).epsilon(1e-9));
  CHECK(fit.coefficients(0) == 0.0);
}

TEST_CASE("offset that already fits gives a zero coefficient") {
  const Eigen::MatrixXd none(6, 0);
  LogisticOptions opt;
  opt.offset = Eigen::VectorXd::Zero(6);
  const auto model = fit_logistic(none, ints({1, 0, 1, 0, 1, 0}), opt);
  const auto& fit = std::get<BinaryLearnerModel::LogisticFit>(model.parameters());
  CHECK(std::abs(fit.intercept) < 1e-12);

  const Eigen::VectorXd offset = Eigen::VectorXd::LinSpaced(6, -2, 2);
  const Eigen::VectorXd p = model.predict(none, offset);
  for (Index i = 0; i < 6; ++i) CHECK(p(i) == doctest::Approx(clip_probability(expit(offset(i)))).epsilon(1e-14));
}

TEST_CASE("logistic score is zero at the optimum") {
  std::mt19937_64 rng(11);
  const Index n = 400;
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXi y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 3; ++j) x(i, j) = 4.0 * uniform01(rng) - 2.0 + 10.0 * static_cast<double>(j);
    y(i) = uniform01(rng) < expit(0.5 + x(i, 0) - 0.3 * (x(i, 1) - 10.0)) ? 1 : 0;
  }
  for (bool interactions : {false, true}) {
    LogisticOptions opt;
    opt.interactions = interactions;
    const auto model = fit_logistic(x, y, opt);
    const auto& fit = std::get<BinaryLearnerModel::LogisticFit>(model.parameters());
    CHECK(fit.max_abs_score < 1e-9);
    // Raw-scale score of the unpenalised intercept must vanish too.
    CHECK(std::abs((y.cast<double>() - model.predict(x)).sum()) < 1e-6);
  }
}

TEST_CASE("non-finite features are rejected") {
  Eigen::MatrixXd x(2, 1);
  x << 1.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(fit_logistic(x, ints({0, 1})), Error);
}

TEST_CASE("stumps") {
  SUBCASE("constant feature collapses to the mean") {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(8, 1);
    const auto model = fit_boosted_stumps(x, ints({1, 1, 0, 0, 0, 0, 0, 0}), 200, 0.5);
    CHECK(model.predict(x)(0) == doctest::Approx(0.25).epsilon(1e-6));
  }
  SUBCASE("xor loss decreases") {
    std::mt19937_64 rng(2);
    Eigen::MatrixXd x(200, 2);
    Eigen::VectorXi y(200);
    for (Index i = 0; i < 200; ++i) {
      x(i, 0) = 2.0 * uniform01(rng) - 1.0;
      x(i, 1) = 2.0 * uniform01(rng) - 1.0;
      y(i) = (x(i, 0) > 0.0) != (x(i, 1) > 0.3) ? 1 : 0;
    }
    const auto model = fit_boosted_stumps(x, y, 50, 0.1);
    const auto& fit = std::get<BinaryLearnerModel::StumpsFit>(model.parameters());
    const double intercept_only = log_loss(y, fit_mean(y).predict(x));
    CHECK(fit.loss_trace.back() < intercept_only);
  }
  SUBCASE("perfect binary split") {
    Eigen::MatrixXd x(6, 1);
    x << 0, 1, 0, 1, 1, 0;
    const Eigen::VectorXi y = ints({0, 1, 0, 1, 1, 0});
    const auto model = fit_boosted_stumps(x, y, 20, 1.0);
    const auto& fit = std::get<BinaryLearnerModel::StumpsFit>(model.parameters());
    REQUIRE_FALSE(fit.stumps.empty());
    CHECK(fit.stumps.front().feature == 0);
    CHECK(fit.stumps.front().threshold == 0.5);
    const Eigen::VectorXd p = model.predict(x);
    for (Index i = 0; i < 6; ++i) CHECK((p(i) > 0.5 ? 1 : 0) == y(i));
  }
  SUBCASE("deterministic") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(50, 2);
    Eigen::VectorXi y(50);
    for (Index i = 0; i < 50; ++i) y(i) = x(i, 0) + 0.3 * x(i, 1) > 0 ? 1 : 0;
    const auto a = fit_boosted_stumps(x, y, 30, 0.2).predict(x);
    const auto b = fit_boosted_stumps(x, y, 30, 0.2).predict(x);
    CHECK(a == b);
  }
}

TEST_CASE("simplex projection") {
  Eigen::VectorXd v(3);
  v << 0.5, 0.5, 0.5;
  CHECK(project_to_simplex(v).isApprox(Eigen::VectorXd::Constant(3, 1.0 / 3.0)));
  v << 2.0, 0.0, -1.0;
  const Eigen::VectorXd p = project_to_simplex(v);
  CHECK(p(0) == doctest::Approx(1.0));
  CHECK(p.minCoeff() >= 0.0);
}

TEST_CASE("super learner") {
  std::mt19937_64 rng(5);
  const Index n = 2000;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXi y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 2.0 * uniform01(rng) - 1.0;
    x(i, 1) = 2.0 * uniform01(rng) - 1.0;
    y(i) = uniform01(rng) < expit(3.0 * x(i, 0) - 2.0 * x(i, 1)) ? 1 : 0;
  }
  const LearnerConfig mean{LearnerKind::Mean};
  const LearnerConfig logistic{LearnerKind::Logistic};

  SUBCASE("strong signal favours logistic") {
    const auto sl = fit_super_learner(x, y, {mean, logistic}, 5, 3);
    CHECK(sl.weights.minCoeff() >= 0.0);
    CHECK(std::abs(sl.weights.sum() - 1.0) < 1e-10);
    CHECK(sl.weights(1) >= 0.9);
    CHECK(sl.cv_log_loss(1) < sl.cv_log_loss(0));
    CHECK(sl.ensemble_cv_log_loss <= sl.cv_log_loss.minCoeff() + 1e-8);
  }
  SUBCASE("single candidate has weight one") {
    const auto sl = fit_super_learner(x, y, {logistic}, 5, 3);
    CHECK(sl.weights.size() == 1);
    CHECK(sl.weights(0) == 1.0);
  }
  SUBCASE("duplicate candidates") {
    const auto sl = fit_super_learner(x, y, {logistic, logistic}, 5, 3);
    CHECK(std::abs(sl.ensemble_cv_log_loss - sl.cv_log_loss(0)) < 1e-10);
    CHECK(std::abs(sl.weights.sum() - 1.0) < 1e-10);
  }
}

TEST_CASE("propensity rows are normalised") {
  std::mt19937_64 rng(9);
  const Index n = 2000;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXi a(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = uniform01(rng);
    a(i) = uniform01(rng) < 0.5 ? 0 : 1;
  }
  const std::vector<LearnerConfig> lib{{LearnerKind::Mean}, {LearnerKind::Logistic}};
  const PropensityModel model = fit_propensity(x, a, 2, lib, 5, 1);
  const Eigen::MatrixXd p = model.predict(x);
  CHECK(std::abs(p.col(0).mean() - 0.5) < 0.05);
  CHECK(std::abs(p.col(1).mean() - 0.5) < 0.05);

  Eigen::MatrixXd probe(1000, 1);
  for (Index i = 0; i < 1000; ++i) probe(i, 0) = 6.0 * uniform01(rng) - 3.0;
  const Eigen::MatrixXd q = model.predict(probe);
  CHECK((q.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-10);
  CHECK(q.minCoeff() >= 1e-6 - 1e-18);

  CHECK_THROWS_AS(fit_propensity(x, Eigen::VectorXi::Zero(n), 1, lib, 5, 1), Error);
}

TEST_CASE("row normalisation floors tiny scores") {
  Eigen::MatrixXd raw(1, 3);
  raw << 1.0, 0.0, 1.0;
  const Eigen::MatrixXd p = normalize_propensity_rows(raw);
  CHECK(p.minCoeff() > 0.0);
  CHECK(std::abs(p.sum() - 1.0) < 1e-12);
  CHECK(p(0, 1) == doctest::Approx(1e-6).epsilon(1e-3));
}
