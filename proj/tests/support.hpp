#pragma once

// Shared oracles and fixtures for the unit tests and the acceptance binary.

#include "elcr/asymptotics.hpp"
#include "elcr/el_engine.hpp"
#include "elcr/estimator.hpp"
#include "elcr/model_core.hpp"
#include "elcr/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace elcr::testing {

inline double dual(const Matrix& U, const Vector& lambda) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    const double a = 1.0 + U.row(i).dot(lambda);
    if (!(a > 0.0)) return -std::numeric_limits<double>::infinity();
    s += std::log(a);
  }
  return s;
}

/// Golden-section maximization of a concave function on [a, b].
template <class F>
double golden_max(F f, double a, double b, double tol = 1e-13) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol * std::max(1.0, std::abs(a) + std::abs(b))) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// Interval of t with 1 + t*a_i + b_i > 0 for all i (b_i = offset).
inline std::pair<double, double> feasible_range(const std::vector<double>& slope, const std::vector<double>& offset) {
  double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < slope.size(); ++i) {
    const double c = 1.0 + offset[i];
    if (slope[i] > 0.0)
      lo = std::max(lo, -c / slope[i]);
    else if (slope[i] < 0.0)
      hi = std::min(hi, -c / slope[i]);
    else if (c <= 0.0)
      return {1.0, -1.0};
  }
  return {lo, hi};
}

/// Brute-force maximizer of sum log(1 + lambda'U_i) for q = 1 or 2 by
/// (nested) golden section over the exact feasible polytope.  The origin
/// must lie strictly inside the convex hull of the rows.
inline Vector brute_force_lambda(const Matrix& U) {
  const int m = static_cast<int>(U.rows());
  const double shrink = 1.0 - 1e-12;
  if (U.cols() == 1) {
    std::vector<double> a(m), b(m, 0.0);
    for (int i = 0; i < m; ++i) a[i] = U(i, 0);
    auto [lo, hi] = feasible_range(a, b);
    lo *= shrink;
    hi *= shrink;
    Vector l(1);
    l[0] = golden_max([&](double t) { Vector v(1); v[0] = t; return dual(U, v); }, lo, hi);
    return l;
  }
  // Range of lambda_1 over the polytope: extreme vertices of the constraint lines.
  double lo1 = std::numeric_limits<double>::infinity(), hi1 = -lo1;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      Eigen::Matrix2d A;
      A << U(i, 0), U(i, 1), U(j, 0), U(j, 1);
      if (std::abs(A.determinant()) < 1e-14) continue;
      const Eigen::Vector2d v = A.lu().solve(Eigen::Vector2d(-1.0, -1.0));
      bool ok = true;
      for (int k = 0; k < m && ok; ++k) ok = 1.0 + U(k, 0) * v[0] + U(k, 1) * v[1] >= -1e-9;
      if (!ok) continue;
      lo1 = std::min(lo1, v[0]);
      hi1 = std::max(hi1, v[0]);
    }
  auto inner = [&](double t1, double* arg) {
    std::vector<double> a(m), b(m);
    for (int i = 0; i < m; ++i) {
      a[i] = U(i, 1);
      b[i] = t1 * U(i, 0);
    }
    auto [lo, hi] = feasible_range(a, b);
    if (!(lo < hi)) return -std::numeric_limits<double>::infinity();
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo) * shrink;
    const double t2 = golden_max(
        [&](double t) {
          Vector v(2);
          v << t1, t;
          return dual(U, v);
        },
        mid - half, mid + half);
    if (arg) *arg = t2;
    Vector v(2);
    v << t1, t2;
    return dual(U, v);
  };
  const double mid = 0.5 * (lo1 + hi1), half = 0.5 * (hi1 - lo1) * shrink;
  const double t1 = golden_max([&](double t) { return inner(t, nullptr); }, mid - half, mid + half);
  double t2 = 0.0;
  inner(t1, &t2);
  Vector l(2);
  l << t1, t2;
  return l;
}

/// Origin strictly inside the convex hull of the rows (q = 1 or 2).
inline bool origin_interior(const Matrix& U) {
  if (U.cols() == 1) return U.col(0).minCoeff() < -1e-3 && U.col(0).maxCoeff() > 1e-3;
  std::vector<double> ang;
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    if (U.row(i).norm() < 1e-3) return false;
    ang.push_back(std::atan2(U(i, 1), U(i, 0)));
  }
  std::sort(ang.begin(), ang.end());
  double gap = ang.front() + 2.0 * std::numbers::pi - ang.back();
  for (std::size_t i = 1; i < ang.size(); ++i) gap = std::max(gap, ang[i] - ang[i - 1]);
  return gap < std::numbers::pi - 0.2;
}

/// Random dual instance with m in [3, 10] rows and q in {1, 2} columns.
inline Matrix random_dual_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> qd(1, 2);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-0.5, 0.5);
  for (;;) {
    const int q = qd(rng);
    std::uniform_int_distribution<int> md(q + 2, 10);
    const int m = md(rng);
    Matrix U(m, q);
    Vector s(q);
    for (int j = 0; j < q; ++j) s[j] = shift(rng);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < q; ++j) U(i, j) = nd(rng) + s[j];
    if (origin_interior(U)) return U;
  }
}

/// A small labeled corpus of datasets used by the invariant checks.
struct CorpusEntry {
  std::string name;
  CaptureDataset data;
  Family family;
};

inline std::vector<CorpusEntry> dataset_corpus() {
  std::vector<CorpusEntry> out;
  const std::vector<std::pair<char, int>> designs{{'A', 200}, {'B', 200}, {'C', 200}, {'D', 150}, {'F', 720}};
  std::uint64_t seed = 11;
  for (const auto& [tag, nu0] : designs) {
    const ScenarioConfig c = scenario(tag, nu0);
    const std::uint64_t s = tag == 'F' ? replication_seed(47, 0) : seed++;
    out.push_back({std::string("scenario ") + tag, generate(c, s), c.family()});
  }
  // Fully observed variant of scenario B.
  ScenarioConfig full = scenario('B', 150);
  full.sel_intercept = -50.0;
  out.push_back({"scenario B, no missing", generate(full, 5), Family::Base});
  return out;
}

/// Maximum over the invariant violations of one fit.
struct InvariantReport {
  double sum_weights_error = 0.0;
  double moment_error = 0.0;
  double ratio_at_mle = 0.0;
  bool lower_ge_n = true;
};

inline InvariantReport check_invariants(ProfileLikelihood& pl, double level = 0.95) {
  InvariantReport r;
  const FitResult& fit = pl.fit();
  r.sum_weights_error = std::abs(fit.weights.sum() - 1.0);
  const CaptureDataset& data = pl.dataset();
  const ModelFamily& family = pl.family();
  Vector acc;
  int i = 0;
  for (const Record& rec : data.records()) {
    if (!rec.complete()) continue;
    const Vector u = constraint_vector(*rec.z, family.tag() == Family::Extended ? rec.x : std::nullopt,
                                       fit.alpha_hat, fit.beta_hat, family, &fit.mask);
    if (acc.size() == 0) acc = Vector::Zero(u.size());
    acc += fit.weights[i++] * u;
  }
  r.moment_error = acc.cwiseAbs().maxCoeff();
  r.ratio_at_mle = std::abs(pl.ratio_profile(fit.nu_hat));
  const IntervalResult ci = pl.confidence_interval(level);
  r.lower_ge_n = ci.lower >= data.n() && ci.lower <= fit.nu_hat && ci.upper >= fit.nu_hat;
  return r;
}

/// Copy of the dataset with covariate column `col` mapped to a*z + b.
inline CaptureDataset affine_covariate(const CaptureDataset& data, int col, double a, double b) {
  std::vector<Record> recs = data.records();
  for (Record& r : recs)
    if (r.z) (*r.z)[col] = a * (*r.z)[col] + b;
  return CaptureDataset(data.occasions(), std::move(recs));
}

/// Worst relative discrepancy between analytic derivatives (pi-dot, pi-ddot,
/// dU/dbeta) and central finite differences at one random point.
inline double derivative_discrepancy(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kd(2, 8);
  std::uniform_real_distribution<double> ud(-1.0, 1.0), hd(0.1, 1.0);
  std::bernoulli_distribution bd(0.5);
  const bool extended = bd(rng);
  const int K = kd(rng);
  const int p = extended ? 3 : 2;
  const ModelFamily family(extended ? Family::Extended : Family::Base, K, p);
  Vector z(p), beta(p);
  z[0] = 1.0;
  std::optional<int> x;
  if (extended) {
    x = bd(rng) ? 1 : 0;
    z[1] = *x;
    z[2] = 2.0 * ud(rng);
  } else {
    z[1] = 2.0 * ud(rng);
  }
  for (int j = 0; j < p; ++j) beta[j] = ud(rng);
  Vector h(family.cell_count());
  for (int c = 0; c < h.size(); ++c) h[c] = hd(rng);
  Vector alpha(family.cell_count());
  for (int c = 0; c < alpha.size(); ++c) alpha[c] = hd(rng) / alpha.size();

  const double eps = 1e-5;
  auto rel = [](const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(a.norm(), 1e-12); };
  const SelectionProb sp = selection_prob(z, x, beta, h, family);
  Vector fd_grad(p);
  Matrix fd_hess(p, p);
  std::vector<int> cells(family.cell_count());
  for (int c = 0; c < family.cell_count(); ++c) cells[c] = c;
  const Matrix J = constraint_jacobian(z, x, beta, family, cells);
  Matrix fd_J(p, family.cell_count());
  for (int j = 0; j < p; ++j) {
    Vector bp = beta, bm = beta;
    bp[j] += eps;
    bm[j] -= eps;
    const SelectionProb a = selection_prob(z, x, bp, h, family), b = selection_prob(z, x, bm, h, family);
    fd_grad[j] = (a.pi - b.pi) / (2.0 * eps);
    fd_hess.col(j) = (a.grad - b.grad) / (2.0 * eps);
    fd_J.row(j) = ((constraint_vector(z, x, alpha, bp, family) - constraint_vector(z, x, alpha, bm, family)) /
                   (2.0 * eps))
                      .transpose();
  }
  return std::max({rel(sp.grad, fd_grad), rel(sp.hess, fd_hess), rel(J, fd_J)});
}

}  // namespace elcr::testing
