#pragma once

// Profile of the empirical log-likelihood over (alpha, p) at fixed
// (nu, beta).  With w_c = m_c / gamma_c the optimality conditions read
//   p_i = 1 / (nu - sum_c w_c C_ic),   gamma_c = sum_i p_i C_ic,
// where C_ic is the cell-c probability of complete record i.  w is the
// minimizer of the strictly convex
//   Phi(w) = -sum_i log(nu - w'C_i) - sum_c m_c log w_c,
// and the Lagrange multiplier of the moment constraints is lambda = -w/m.

#include "elcr/model_core.hpp"

#include <vector>

namespace elcr::detail {

struct MiddleOptions {
  double grad_tol = 1e-8;
  int max_iter = 500;
  int restarts = 5;
};

class ProfileSolver {
 public:
  ProfileSolver(const CaptureDataset& dataset, const ModelFamily& family);

  struct Evaluation {
    double value = 0.0;   // l(nu, alpha*(nu,beta), beta)
    Vector grad_beta;
    double dnu = 0.0;     // derivative of the same profile in nu
    double gamma0 = 0.0;
  };

  /// Profiles alpha and the weights out at (nu, beta).  `w` (one entry per
  /// active cell, cell 0 first) is used as a warm start and overwritten.
  /// Returns false when the convex solve fails.
  bool evaluate(double nu, const Vector& beta, Vector& w, Evaluation& out) const;

  struct State {
    Vector beta;
    Vector w;
  };

  struct MiddleResult {
    State state;
    Evaluation eval;
    int iterations = 0;
    bool converged = false;
    bool ok = false;
  };

  /// Maximizes the profile over the free components of beta at fixed nu.
  MiddleResult maximize(double nu, const State& start, const std::vector<bool>& free,
                        const MiddleOptions& options) const;

  struct PointDetail {
    Vector gamma;          // every cell: sum_i p_i C_ic
    Vector weights;        // p_i on complete records
    Vector lambda;         // active cells, cell 0 first
  };
  PointDetail detail(double nu, const Vector& beta, const Vector& w) const;

  /// Naive start: binomial logistic regression of D_i on Z_i over complete records.
  Vector initial_beta() const;

  const std::vector<int>& active_cells() const { return cells_; }
  double n() const { return n_; }
  int m() const { return static_cast<int>(Z_.rows()); }
  int dim() const { return static_cast<int>(Z_.cols()); }

 private:
  void cell_matrix(const Vector& beta, Matrix& C, Vector& g, double& binom_part) const;
  bool solve_weights(double nu, const Matrix& C, Vector& w) const;

  ModelFamily family_;
  Matrix Z_;
  Eigen::VectorXi D_;
  std::vector<int> X_;
  double n_ = 0.0;
  std::vector<int> cells_;       // active cells, cell 0 first
  Vector cell_counts_;           // m_c for active cells (entry 0 unused)
  Eigen::VectorXd cell_captures_;
};

}  // namespace elcr::detail
