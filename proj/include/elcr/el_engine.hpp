#pragma once

// Inner empirical-likelihood machinery: the Lagrange multiplier of the
// moment constraints, the implied weights, and the profile empirical
// log-likelihood of (nu, alpha, beta).

#include "elcr/model_core.hpp"

namespace elcr {

struct LambdaOptions {
  double tol = 1e-10;   // sup-norm of sum_i U_i / (1 + lambda'U_i)
  int max_iter = 100;
};

struct LambdaSolution {
  Vector lambda;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

/// Solves sum_i U_i/(1+lambda'U_i) = 0 by damped Newton ascent on the
/// concave dual sum_i log(1+lambda'U_i), starting from lambda = 0.  Rows of
/// `U` are individuals.  On failure (dual unbounded or budget exhausted) the
/// zero vector is returned with converged = false.
LambdaSolution solve_lambda(const Eigen::Ref<const Matrix>& U, const LambdaOptions& options = {});

/// p_i = (1/m) / (1 + lambda'U_i).  Throws std::domain_error when some
/// denominator is not positive.
Vector el_weights(const VectorRef& lambda, const Eigen::Ref<const Matrix>& U);

/// log C(nu, n) for real nu >= n.
double log_choose(double nu, double n);

struct ProfileEvaluation {
  double value = 0.0;            // -inf when the multiplier solve failed
  LambdaSolution lambda;
  Vector weights;                // EL weights on the complete records
  Matrix U;                      // active constraint evaluations, m x q
};

/// Profile empirical log-likelihood l(nu, alpha, beta).  alpha has one entry
/// per cell of the family; only cells active in `counts` enter the
/// constraints.  Throws DataError when there are no complete records and
/// std::domain_error for nu < n or an active alpha outside (0,1).
double profile_loglik(double nu, const VectorRef& alpha, const VectorRef& beta,
                      const CaptureDataset& dataset, const ModelFamily& family,
                      const CellCounts& counts, const LambdaOptions& options = {});

ProfileEvaluation evaluate_profile(double nu, const VectorRef& alpha, const VectorRef& beta,
                                   const CaptureDataset& dataset, const ModelFamily& family,
                                   const CellCounts& counts, const LambdaOptions& options = {});

}  // namespace elcr
