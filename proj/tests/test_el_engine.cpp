#include "support.hpp"

#include "elcr/error.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/tools/roots.hpp>
#include <doctest.h>

using namespace elcr;

namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix U(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) U(i++, 0) = x;
  return U;
}

}  // namespace

TEST_CASE("lambda: closed-form two-point example") {
  const Matrix U = col({-0.1, 0.3});
  const LambdaSolution s = solve_lambda(U);
  REQUIRE(s.converged);
  CHECK(s.lambda[0] == doctest::Approx(10.0 / 3.0).epsilon(1e-10));
  const Vector p = el_weights(s.lambda, U);
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-10));
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(std::abs(p.dot(U.col(0))) < 1e-12);
  CHECK(s.residual < 1e-10);
}

TEST_CASE("lambda: mean-zero data gives zero") {
  CHECK(solve_lambda(col({-0.1, 0.1})).lambda.norm() < 1e-14);
  Matrix U(4, 2);
  U << 1.0, -2.0, -1.0, 2.0, 0.5, 0.5, -0.5, -0.5;
  const LambdaSolution s = solve_lambda(U);
  CHECK(s.converged);
  CHECK(s.lambda.norm() < 1e-14);
  CHECK(s.iterations == 0);
}

TEST_CASE("lambda: origin outside the convex hull is reported") {
  const LambdaSolution s = solve_lambda(col({0.1, 0.2, 0.3}));
  CHECK_FALSE(s.converged);
  CHECK(s.lambda.norm() == 0.0);
}

TEST_CASE("lambda: duplicated columns (singular Hessian)") {
  Matrix U(3, 2);
  U << -0.1, -0.1, 0.3, 0.3, 0.05, 0.05;
  const LambdaSolution s = solve_lambda(U);
  REQUIRE(s.converged);
  const Vector p = el_weights(s.lambda, U);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(p.dot(U.col(0))) < 1e-10);
}

TEST_CASE("lambda: agrees with brute-force dual maximization") {
  std::mt19937_64 rng(20240611);
  double worst = 0.0;
  for (int t = 0; t < 30; ++t) {
    const Matrix U = testing::random_dual_instance(rng);
    const LambdaSolution s = solve_lambda(U);
    REQUIRE(s.converged);
    const Vector bf = testing::brute_force_lambda(U);
    worst = std::max(worst, (s.lambda - bf).cwiseAbs().maxCoeff() / std::max(1.0, bf.cwiseAbs().maxCoeff()));
    // The solution is a maximum of the concave dual.
    for (int k = 0; k < 5; ++k) {
      Vector d = Vector::Random(U.cols()) * 1e-3;
      CHECK(testing::dual(U, s.lambda + d) <= testing::dual(U, s.lambda) + 1e-12);
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("lambda: scaling the constraints rescales the multiplier") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const Matrix U = testing::random_dual_instance(rng);
    const LambdaSolution a = solve_lambda(U), b = solve_lambda(2.5 * U);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    CHECK((2.5 * b.lambda - a.lambda).norm() < 1e-8 * std::max(1.0, a.lambda.norm()));
    CHECK((el_weights(a.lambda, U) - el_weights(b.lambda, 2.5 * U)).norm() < 1e-10);
  }
}

TEST_CASE("weights") {
  const Matrix U = col({0.4, -0.2, 0.1});
  const Vector p = el_weights(Vector::Zero(1), U);
  for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(1.0 / 3.0));
  CHECK(el_weights(Vector::Zero(1), col({0.7}))[0] == doctest::Approx(1.0));
  Vector bad(1);
  bad << 10.0;
  CHECK_THROWS_AS(el_weights(bad, U), std::domain_error);
}

TEST_CASE("log binomial coefficient in real nu") {
  CHECK(log_choose(100.0, 100.0) == doctest::Approx(0.0));
  CHECK(log_choose(5.0, 2.0) == doctest::Approx(std::log(10.0)).epsilon(1e-13));
  CHECK(log_choose(1000.0, 163.0) > 0.0);
  CHECK_THROWS_AS(log_choose(99.0, 100.0), std::domain_error);

  // argmax over nu of log C(nu, n) + (nu - n) log gamma0 is the digamma root.
  const double n = 100.0, lg = std::log(0.5);
  const double by_search =
      testing::golden_max([&](double nu) { return log_choose(nu, n) + (nu - n) * lg; }, n, 10.0 * n, 1e-14);
  std::uintmax_t it = 200;
  const auto root = boost::math::tools::toms748_solve(
      [&](double nu) { return boost::math::digamma(nu + 1.0) - boost::math::digamma(nu - n + 1.0) + lg; },
      n + 1e-6, 10.0 * n, boost::math::tools::eps_tolerance<double>(50), it);
  const double by_root = 0.5 * (root.first + root.second);
  CHECK(by_root == doctest::Approx(199.5).epsilon(2e-3));
  CHECK(by_search == doctest::Approx(by_root).epsilon(1e-6));
}

TEST_CASE("profile log-likelihood: complete-data reduction") {
  // Without missing covariates only the cell-0 constraint remains and the
  // profile equals log C(nu,n) + (nu-n) log a - sum log(1 + l U_i) + binomial terms.
  ScenarioConfig c = scenario('B', 120);
  c.sel_intercept = -50.0;
  const CaptureDataset data = generate(c, 9);
  REQUIRE(data.m() == data.n());
  const ModelFamily family = family_for(data, Family::Base);
  const CellCounts counts = summarize(data, family);
  REQUIRE(counts.active_cells() == std::vector<int>{0});
  Vector beta(2);
  beta << -1.8, 0.9;
  Vector alpha = Vector::Constant(family.cell_count(), 0.2);
  alpha[0] = 0.3;
  const double nu = 140.0;

  Matrix U(data.m(), 1);
  double binom = 0.0;
  int i = 0;
  for (const Record& r : data.records()) {
    const double g = capture_prob(*r.z, beta);
    U(i++, 0) = std::pow(1.0 - g, 5) - alpha[0];
    binom += r.d * std::log(g) + (5 - r.d) * std::log(1.0 - g);
  }
  const Vector lambda = testing::brute_force_lambda(U);
  const double expected = log_choose(nu, data.n()) + (nu - data.n()) * std::log(alpha[0]) -
                          testing::dual(U, lambda) + binom;
  CHECK(profile_loglik(nu, alpha, beta, data, family, counts) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("profile log-likelihood: domain errors") {
  const CaptureDataset data = generate(scenario('A', 100), 4);
  const ModelFamily family = family_for(data, Family::Base);
  const CellCounts counts = summarize(data, family);
  Vector alpha = Vector::Constant(3, 0.3);
  Vector beta(2);
  beta << -2.0, 1.0;
  CHECK_THROWS_AS(profile_loglik(data.n() - 1.0, alpha, beta, data, family, counts), std::domain_error);
  alpha[0] = 1.2;
  CHECK_THROWS_AS(profile_loglik(data.n() + 10.0, alpha, beta, data, family, counts), std::domain_error);

  std::vector<Record> none{Record{1, std::nullopt, std::nullopt}};
  const CaptureDataset empty(2, none);
  CHECK_THROWS_AS(
      profile_loglik(5.0, Vector::Constant(3, 0.3), Vector::Zero(0), empty, ModelFamily(Family::Base, 2, 0),
                     summarize(empty, ModelFamily(Family::Base, 2, 0))),
      DataError);
}

TEST_CASE("profiled alpha is the maximizer of the profile at fixed (nu, beta)") {
  // The estimator profiles alpha through a convex dual; evaluating the
  // explicit (alpha, beta) likelihood at its output must reproduce the value,
  // and moving any active alpha component must not increase it.
  for (char tag : {'A', 'B', 'C'}) {
    const ScenarioConfig c = scenario(tag, 200);
    const CaptureDataset data = generate(c, 21);
    ProfileLikelihood pl(data, c.family());
    const FitResult& fit = pl.fit();
    const ModelFamily& family = pl.family();
    for (double nu : {fit.nu_hat, fit.nu_hat + 15.0, std::max<double>(data.n() + 1.0, fit.nu_hat - 10.0)}) {
      const ProfilePoint pt = pl.profile_at(nu);
      const double v = profile_loglik(nu, pt.alpha, pt.beta, data, family, pl.counts());
      CHECK(v == doctest::Approx(pt.loglik).epsilon(1e-9));
      for (int cell : pl.counts().active_cells()) {
        for (double step : {-1e-3, 1e-3}) {
          Vector a = pt.alpha;
          a[cell] *= 1.0 + step;
          CHECK(profile_loglik(nu, a, pt.beta, data, family, pl.counts()) <= pt.loglik + 1e-9);
        }
      }
    }
  }
}
