#pragma once

// Plug-in estimate of the asymptotic information matrix W of the MELE and
// a log-scale Wald interval built from it.

#include "elcr/estimator.hpp"
#include "elcr/model_core.hpp"

#include <vector>

namespace elcr {

/// h_c = pr(covariate observed | cell c) estimated by cell proportions.
/// Entry 0 is unused.  Cells without any captured individual are flagged
/// undefined and carry h = 0.
struct SelectionEstimate {
  Vector h;
  std::vector<bool> defined;
  std::vector<int> complete;
  std::vector<int> total;
};

SelectionEstimate estimate_h(const CaptureDataset& dataset, const ModelFamily& family);

/// pi(z; beta) = sum_c C_c(z; beta) h_c with its first two beta derivatives.
struct SelectionProb {
  double pi = 0.0;
  Vector grad;
  Matrix hess;
};

SelectionProb selection_prob(const VectorRef& z, std::optional<int> x, const VectorRef& beta,
                             const VectorRef& h, const ModelFamily& family);

/// dU_c/dbeta for the listed cells as columns (p x cells.size()).
Matrix constraint_jacobian(const VectorRef& z, std::optional<int> x, const VectorRef& beta,
                           const ModelFamily& family, const std::vector<int>& cells);

struct WBlocks {
  std::vector<int> cells;       // active constraint cells, cell 0 first
  double V11 = 0.0;
  Vector V12;                   // 1 x q (stored as a vector)
  Matrix V22, V23, V24, V33, V34, V44;
  Matrix W;                     // assembled (1 + q + p) square matrix
  Matrix covariance;            // asymptotic covariance of sqrt(nu0)(log nu, alpha, beta)
  Vector h;                     // selection probabilities per cell
  double lambda00 = 0.0;
  Vector H1;
  Matrix H2;
  double condition = 0.0;       // condition number of the bordered system
  bool v44_singular = false;    // V44 inverted by pseudo-inverse inside W
  bool ill_conditioned = false; // covariance from a pseudo-inverse
};

/// Every expectation over the covariate law is replaced by the EL-weighted
/// sum over complete records at the MELE.
WBlocks estimate_W(const FitResult& fit, const CaptureDataset& dataset, Family family);

struct WaldInterval {
  double level = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool below_n = false;
};

/// nu_hat * exp(+-z_{1-a/2} sqrt(cov[0,0] / nu_hat)).
WaldInterval wald_interval_lognu(const FitResult& fit, const WBlocks& blocks, double level);

}  // namespace elcr
