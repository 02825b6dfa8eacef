#include "elcr/el_engine.hpp"

#include "elcr/error.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>

namespace elcr {

namespace {

// Dual objective; -inf outside the feasible region.
double dual_value(const Eigen::Ref<const Matrix>& U, const Vector& lambda) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    const double den = 1.0 + U.row(i).dot(lambda);
    if (!(den > 0.0)) return -std::numeric_limits<double>::infinity();
    total += std::log(den);
  }
  return total;
}

// Moore-Penrose solve for a symmetric positive semidefinite system.  With
// every cell active the constraint rows sum to a constant, so the Hessian
// can be singular along that direction.
Vector psd_solve(const Matrix& H, const Vector& b) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(H);
  const Vector& ev = eig.eigenvalues();
  const double cutoff = std::max(ev.cwiseAbs().maxCoeff(), 1e-300) * 1e-13;
  Vector coef = eig.eigenvectors().transpose() * b;
  for (Eigen::Index j = 0; j < ev.size(); ++j) coef[j] = ev[j] > cutoff ? coef[j] / ev[j] : 0.0;
  return eig.eigenvectors() * coef;
}

}  // namespace

LambdaSolution solve_lambda(const Eigen::Ref<const Matrix>& U, const LambdaOptions& options) {
  const Eigen::Index m = U.rows();
  const Eigen::Index q = U.cols();
  if (m < 1 || q < 1) throw std::invalid_argument("solve_lambda: empty constraint matrix");
  if (!U.allFinite()) throw std::invalid_argument("solve_lambda: non-finite constraint values");

  LambdaSolution sol;
  Vector lambda = Vector::Zero(q);
  double dual = 0.0;
  Vector grad(q);
  Matrix H(q, q);
  for (int iter = 0; iter <= options.max_iter; ++iter) {
    grad.setZero();
    H.setZero();
    double mass = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double w = 1.0 / (1.0 + U.row(i).dot(lambda));
      mass += w;
      grad.noalias() += w * U.row(i).transpose();
      H.selfadjointView<Eigen::Lower>().rankUpdate(U.row(i).transpose(), w * w);
    }
    H = H.selfadjointView<Eigen::Lower>();
    sol.residual = grad.cwiseAbs().maxCoeff();
    sol.iterations = iter;
    if (sol.residual <= options.tol) {
      // At a genuine root the weights sum to one; a vanishing gradient with
      // vanishing mass is the unbounded direction, not a solution.
      if (std::abs(mass / m - 1.0) > 1e-6) break;
      sol.lambda = lambda;
      sol.converged = true;
      return sol;
    }
    if (iter == options.max_iter) break;

    const Vector step_dir = psd_solve(H, grad);
    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving, step *= 0.5) {
      const Vector trial = lambda + step * step_dir;
      const double trial_dual = dual_value(U, trial);
      if (trial_dual >= dual - 1e-13 * std::max(1.0, std::abs(dual))) {
        lambda = trial;
        dual = trial_dual;
        accepted = true;
        break;
      }
    }
    // An ever-growing multiplier means zero is not inside the convex hull of the rows.
    if (!accepted || !lambda.allFinite() || lambda.cwiseAbs().maxCoeff() > 1e15) break;
  }
  sol.lambda = Vector::Zero(q);
  sol.converged = false;
  return sol;
}

Vector el_weights(const VectorRef& lambda, const Eigen::Ref<const Matrix>& U) {
  if (lambda.size() != U.cols()) throw std::invalid_argument("el_weights: dimension mismatch");
  const double m = static_cast<double>(U.rows());
  Vector p(U.rows());
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    const double den = 1.0 + U.row(i).dot(lambda);
    if (!(den > 0.0)) throw std::domain_error("el_weights: multiplier outside the feasible region");
    p[i] = 1.0 / (m * den);
  }
  return p;
}

double log_choose(double nu, double n) {
  if (nu < n) throw std::domain_error("log_choose: nu < n");
  return boost::math::lgamma(nu + 1.0) - boost::math::lgamma(n + 1.0) -
         boost::math::lgamma(nu - n + 1.0);
}

ProfileEvaluation evaluate_profile(double nu, const VectorRef& alpha, const VectorRef& beta,
                                   const CaptureDataset& dataset, const ModelFamily& family,
                                   const CellCounts& counts, const LambdaOptions& options) {
  const int m = dataset.m();
  const double n = dataset.n();
  if (m == 0) throw DataError("no complete records: capture model is unidentifiable");
  if (!(nu >= n)) throw std::domain_error("profile_loglik: nu below the number of captured individuals");
  if (alpha.size() != family.cell_count()) throw std::invalid_argument("profile_loglik: alpha dimension mismatch");
  if (beta.size() != dataset.covariate_dim()) throw std::invalid_argument("profile_loglik: beta dimension mismatch");
  const std::vector<int> cells = counts.active_cells();
  for (int c : cells)
    if (!(alpha[c] > 0.0 && alpha[c] < 1.0)) throw std::domain_error("profile_loglik: alpha outside (0,1)");

  const int K = family.occasions();
  ProfileEvaluation out;
  out.U.resize(m, static_cast<Eigen::Index>(cells.size()));
  double binom_part = 0.0;
  std::vector<double> probs;
  int row = 0;
  for (const Record& r : dataset.records()) {
    if (!r.complete()) continue;
    const double eta = r.z->dot(beta);
    // log g and log(1-g) from the linear predictor directly.
    const double log_g = eta >= 0 ? -std::log1p(std::exp(-eta)) : eta - std::log1p(std::exp(eta));
    const double log_1mg = log_g - eta;
    binom_part += r.d * log_g + (K - r.d) * log_1mg;
    cell_probs(std::exp(log_g), family, r.x, probs);
    for (std::size_t j = 0; j < cells.size(); ++j) out.U(row, j) = probs[cells[j]] - alpha[cells[j]];
    ++row;
  }

  double value = log_choose(nu, n) + binom_part;
  if (nu > n) value += (nu - n) * std::log(alpha[0]);
  for (int c : cells)
    if (c > 0) value += counts.counts[c] * std::log(alpha[c]);

  out.lambda = solve_lambda(out.U, options);
  if (!out.lambda.converged) {
    out.value = -std::numeric_limits<double>::infinity();
    return out;
  }
  out.weights = el_weights(out.lambda.lambda, out.U);
  double log_dual = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) log_dual += std::log(1.0 + out.U.row(i).dot(out.lambda.lambda));
  out.value = value - log_dual;
  return out;
}

double profile_loglik(double nu, const VectorRef& alpha, const VectorRef& beta,
                      const CaptureDataset& dataset, const ModelFamily& family,
                      const CellCounts& counts, const LambdaOptions& options) {
  return evaluate_profile(nu, alpha, beta, dataset, family, counts, options).value;
}

}  // namespace elcr
