#include "support.hpp"

#include "elcr/error.hpp"

#include <doctest.h>

using namespace elcr;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Record complete(int d, std::initializer_list<double> z, std::optional<int> x = std::nullopt) {
  Record r;
  r.d = d;
  r.z = vec(z);
  r.x = x;
  return r;
}

Record incomplete(int d, std::optional<int> x = std::nullopt) {
  Record r;
  r.d = d;
  r.x = x;
  return r;
}

}  // namespace

TEST_CASE("capture probability") {
  const Vector beta = vec({-2.0, 1.0});
  CHECK(capture_prob(vec({1.0, 2.0}), beta) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(capture_prob(vec({1.0, 0.0}), beta) == doctest::Approx(0.11920292202211755).epsilon(1e-14));
  const double sat = capture_prob(vec({1.0, 1000.0}), beta);
  CHECK(std::isfinite(sat));
  CHECK(sat == 1.0);
  const double low = capture_prob(vec({1.0, -1000.0}), beta);
  CHECK(low >= 0.0);
  CHECK(low < 1e-300);
  // 1 - g(z) = g(-z) for the logistic link.
  CHECK(capture_prob(vec({1.0, 0.7}), beta) + capture_prob(vec({-1.0, -0.7}), beta) ==
        doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("binomial cell probabilities") {
  std::vector<double> p;
  capture_count_probs(0.5, 2, p);
  REQUIRE(p.size() == 3);
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.5));
  CHECK(p[2] == doctest::Approx(0.25));

  const ModelFamily base(Family::Base, 5, 2);
  const Vector beta = vec({-2.0, 1.0});
  CHECK(cell_prob(vec({1.0, 0.0}), 0, base, beta) == doctest::Approx(std::pow(1.0 - 0.11920292202211755, 5)).epsilon(1e-13));
  CHECK(cell_prob(vec({1.0, 0.0}), 0, base, beta) == doctest::Approx(0.530126).epsilon(1e-6));

  CHECK(log_binomial_coefficient(17, 5) == doctest::Approx(std::log(6188.0)).epsilon(1e-13));
  CHECK(log_binomial_coefficient(64, 32) == doctest::Approx(std::log(1.832624140942590534e18)).epsilon(1e-12));

  for (int K : {1, 2, 5, 17, 64})
    for (double g : {1e-6, 0.01, 0.3, 0.5, 0.97, 1.0 - 1e-9}) {
      capture_count_probs(g, K, p);
      double s = 0.0;
      for (double v : p) s += v;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("cell layout of the model families") {
  const ModelFamily base(Family::Base, 4, 2);
  CHECK(base.cell_count() == 5);
  CHECK(base.cell_index(0, 3) == 3);
  const ModelFamily ext(Family::Extended, 4, 3);
  CHECK(ext.cell_count() == 9);
  CHECK(ext.cell_index(0, 0) == 0);
  CHECK(ext.cell_index(0, 1) == 1);
  CHECK(ext.cell_index(1, 1) == 5);
  CHECK(ext.cell_index(1, 4) == 8);
  for (int c = 1; c < ext.cell_count(); ++c) CHECK(ext.cell_index(ext.level_of(c), ext.captures_of(c)) == c);
  CHECK_THROWS_AS(ext.cell_index(2, 1), std::out_of_range);
  CHECK_THROWS_AS(base.cell_index(0, 5), std::out_of_range);
}

TEST_CASE("extended cell probabilities sum to one and aggregate to the base cells") {
  const ModelFamily base(Family::Base, 5, 3);
  const ModelFamily ext(Family::Extended, 5, 3);
  std::vector<double> pb, pe;
  for (int x : {0, 1}) {
    cell_probs(0.37, ext, x, pe);
    cell_probs(0.37, base, std::nullopt, pb);
    double s = 0.0;
    for (double v : pe) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(pe[0] == doctest::Approx(pb[0]));
    for (int k = 1; k <= 5; ++k) {
      CHECK(pe[ext.cell_index(x, k)] == doctest::Approx(pb[k]));
      CHECK(pe[ext.cell_index(1 - x, k)] == 0.0);
    }
  }
}

TEST_CASE("constraint vector") {
  const ModelFamily base(Family::Base, 2, 2);
  const Vector z = vec({1.0, 2.0});
  const Vector beta = vec({-2.0, 1.0});
  Vector u = constraint_vector(z, std::nullopt, vec({0.25, 0.5, 0.25}), beta, base);
  CHECK(u.cwiseAbs().maxCoeff() < 1e-15);
  u = constraint_vector(z, std::nullopt, vec({0.2, 0.5, 0.25}), beta, base);
  CHECK(u[0] == doctest::Approx(0.05));
  CHECK(std::abs(u[1]) < 1e-15);
  CHECK(std::abs(u[2]) < 1e-15);

  const ModelFamily ext(Family::Extended, 2, 3);
  const Vector ze = vec({1.0, 1.0, 1.0});
  const Vector be = vec({-1.0, 0.0, 1.0});
  const Vector gamma = vec({0.1, 0.02, 0.03, 0.2, 0.05});
  u = constraint_vector(ze, 1, gamma, be, ext);
  CHECK(u[0] == doctest::Approx(0.25 - 0.1));
  CHECK(u[1] == doctest::Approx(-0.02));
  CHECK(u[2] == doctest::Approx(-0.03));
  CHECK(u[3] == doctest::Approx(0.5 - 0.2));
  CHECK(u[4] == doctest::Approx(0.25 - 0.05));

  std::vector<bool> mask{true, false, true, true, false};
  const Vector um = constraint_vector(ze, 1, gamma, be, ext, &mask);
  REQUIRE(um.size() == 3);
  CHECK(um[0] == doctest::Approx(u[0]));
  CHECK(um[1] == doctest::Approx(u[2]));
  CHECK(um[2] == doctest::Approx(u[3]));
  CHECK_THROWS(constraint_vector(ze, std::nullopt, gamma, be, ext));
}

TEST_CASE("capture probability is monotone in the linear predictor") {
  const Vector beta = vec({-1.0, 0.8});
  double prev = 0.0;
  for (double y = -20.0; y <= 20.0; y += 0.5) {
    const double g = capture_prob(vec({1.0, y}), beta);
    CHECK(g >= prev);
    prev = g;
  }
}

TEST_CASE("summarize incomplete records") {
  {
    const CaptureDataset data(2, {complete(1, {1.0, 0.3}), incomplete(1), incomplete(1), incomplete(2)});
    const CellCounts cc = summarize(data, family_for(data, Family::Base));
    CHECK(cc.counts[1] == 2);
    CHECK(cc.counts[2] == 1);
    CHECK(cc.total() == 3);
    CHECK(cc.active_cells() == std::vector<int>{0, 1, 2});
  }
  {
    const CaptureDataset data(3, {complete(1, {1.0, 0.3}), complete(3, {1.0, 0.1})});
    const CellCounts cc = summarize(data, family_for(data, Family::Base));
    CHECK(cc.total() == 0);
    CHECK(cc.active_cells() == std::vector<int>{0});
  }
  {
    const CaptureDataset data(5, {complete(2, {1.0, 0.0, 1.2}, 0), incomplete(1, 0), incomplete(1, 1), incomplete(3, 1)});
    const ModelFamily ext = family_for(data, Family::Extended);
    const CellCounts cc = summarize(data, ext);
    CHECK(cc.counts[ext.cell_index(0, 1)] == 1);
    CHECK(cc.counts[ext.cell_index(1, 1)] == 1);
    CHECK(cc.counts[ext.cell_index(1, 3)] == 1);
    CHECK(cc.total() == 3);
    CHECK(cc.active_cells() == std::vector<int>{0, 1, 6, 8});
  }
}

TEST_CASE("dataset validation") {
  CHECK_THROWS_AS(CaptureDataset(2, {incomplete(0)}), DataError);
  CHECK_THROWS_AS(CaptureDataset(2, {incomplete(3)}), DataError);
  CHECK_THROWS_AS(CaptureDataset(2, {complete(1, {2.0, 1.0})}), DataError);
  CHECK_THROWS_AS(CaptureDataset(2, {complete(1, {1.0, 1.0}), complete(1, {1.0})}), DataError);
  CHECK_THROWS_AS(CaptureDataset(0, {}), DataError);
  CHECK_THROWS_AS(CaptureDataset(2, {incomplete(1, 2)}), DataError);
  const CaptureDataset data(2, {complete(1, {1.0, 1.0}), incomplete(2)});
  CHECK(data.n() == 2);
  CHECK(data.m() == 1);
  CHECK(data.covariate_dim() == 2);
  CHECK_FALSE(data.has_binary());
  CHECK_THROWS_AS(family_for(data, Family::Extended), DataError);
  CHECK(data.complete_cases().n() == 1);
}
