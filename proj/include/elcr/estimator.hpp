#pragma once

// Maximum empirical likelihood estimation of abundance, likelihood-ratio
// statistics, and ratio-based confidence intervals.

#include "elcr/el_engine.hpp"
#include "elcr/model_core.hpp"

#include <memory>
#include <utility>
#include <vector>

namespace elcr {

struct FitOptions {
  double nu_cap_factor = 1e4;      // nu is searched in [n, n * nu_cap_factor]
  double grid_step = 0.25;         // coarse scan step in t = log(nu - n + 1)
  double middle_grad_tol = 1e-8;
  int middle_max_iter = 500;
  int restarts = 5;
};

struct FitResult {
  double nu_hat = 0.0;
  Vector alpha_hat;                // every cell; dropped cells carry sum_i p_i C_ic
  Vector beta_hat;
  double loglik_max = 0.0;
  Vector lambda_hat;               // active cells, cell 0 first
  Vector weights;                  // EL weights on complete records
  std::vector<bool> mask;          // active cells
  bool nu_capped = false;          // maximizer sits at the search cap
  bool middle_converged = false;
  bool outer_converged = false;
  int outer_evaluations = 0;
  int middle_iterations = 0;
  double grad_norm = 0.0;          // sup-norm of the beta gradient at the optimum
  double dnu = 0.0;                // profile derivative in nu at the optimum
  double nu_cap = 0.0;
  int n = 0;
  int m = 0;
};

struct IntervalResult {
  double level = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool upper_capped = false;
  double nu_hat = 0.0;
  std::vector<std::pair<double, double>> trace;   // (nu, R'(nu)) evaluations
};

struct ProfilePoint {
  double nu = 0.0;
  double loglik = 0.0;
  Vector alpha;
  Vector beta;
  bool converged = false;
};

/// Holds one dataset and caches profile solves so that repeated ratio
/// evaluations (interval search, diagnostics) are warm-started.
class ProfileLikelihood {
 public:
  ProfileLikelihood(CaptureDataset dataset, Family family, FitOptions options = {});
  ~ProfileLikelihood();
  ProfileLikelihood(ProfileLikelihood&&) noexcept;
  ProfileLikelihood& operator=(ProfileLikelihood&&) noexcept;

  const CaptureDataset& dataset() const { return dataset_; }
  const ModelFamily& family() const { return family_; }
  const CellCounts& counts() const { return counts_; }

  /// MELE; throws OptimizationError when no point can be evaluated.
  const FitResult& fit();

  /// max over (alpha, beta) of l(nu, alpha, beta), with the maximizer.
  ProfilePoint profile_at(double nu);

  /// R'(nu) = 2{l(MELE) - max_(alpha,beta) l(nu, alpha, beta)}.
  double ratio_profile(double nu);

  /// R(nu, alpha, beta) = 2{l(MELE) - l(nu, alpha, beta)}.
  double ratio_full(double nu, const VectorRef& alpha, const VectorRef& beta);

  IntervalResult confidence_interval(double level);

  /// MELE with beta[coef] held at `value`.
  FitResult fit_with_fixed(int coef, double value);

 private:
  struct Impl;
  CaptureDataset dataset_;
  ModelFamily family_;
  CellCounts counts_;
  FitOptions options_;
  std::unique_ptr<Impl> impl_;
};

FitResult fit_mele(const CaptureDataset& dataset, Family family, const FitOptions& options = {});

/// Complete-case baseline: incomplete records are discarded before fitting.
FitResult fit_complete_case(const CaptureDataset& dataset, Family family, const FitOptions& options = {});

double ratio_full(double nu, const VectorRef& alpha, const VectorRef& beta, const FitResult& fit,
                  const CaptureDataset& dataset, Family family);

double ratio_profile(double nu, const CaptureDataset& dataset, Family family, const FitOptions& options = {});

IntervalResult confidence_interval(const CaptureDataset& dataset, Family family, double level,
                                   const FitOptions& options = {});

struct LrtResult {
  double statistic = 0.0;
  double p_value = 1.0;
  FitResult full;
  FitResult restricted;
};

/// Empirical likelihood ratio test of H0: beta[coef] = 0, chi-square(1) calibrated.
LrtResult lrt_coefficient(const CaptureDataset& dataset, Family family, int coef,
                          const FitOptions& options = {});

/// Upper (level) quantile of chi-square with one degree of freedom.
double chi2_1_quantile(double level);

}  // namespace elcr
