#include "profile_solver.hpp"

#include "elcr/el_engine.hpp"
#include "elcr/error.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace elcr::detail {

namespace {


double log_sigmoid(double eta) {
  return eta >= 0 ? -std::log1p(std::exp(-eta)) : eta - std::log1p(std::exp(eta));
}

double inf_norm_free(const Vector& v, const std::vector<bool>& free) {
  double r = 0.0;
  for (Eigen::Index j = 0; j < v.size(); ++j)
    if (free[j]) r = std::max(r, std::abs(v[j]));
  return r;
}

}  // namespace

ProfileSolver::ProfileSolver(const CaptureDataset& dataset, const ModelFamily& family)
    : family_(family), n_(dataset.n()) {
  const int m = dataset.m();
  if (m == 0) throw DataError("no complete records: capture model is unidentifiable");
  const int p = dataset.covariate_dim();
  Z_.resize(m, p);
  D_.resize(m);
  X_.assign(m, 0);
  int row = 0;
  for (const Record& r : dataset.records()) {
    if (!r.complete()) continue;
    Z_.row(row) = r.z->transpose();
    D_[row] = r.d;
    if (family.tag() == Family::Extended) {
      if (!r.x) throw DataError("extended family: complete record without binary covariate");
      X_[row] = *r.x;
    }
    ++row;
  }
  const CellCounts counts = summarize(dataset, family);
  cells_ = counts.active_cells();
  cell_counts_.resize(cells_.size());
  cell_captures_.resize(cells_.size());
  for (std::size_t j = 0; j < cells_.size(); ++j) {
    cell_counts_[j] = cells_[j] == 0 ? 0.0 : counts.counts[cells_[j]];
    cell_captures_[j] = family.captures_of(cells_[j]);
  }
  if (family.tag() == Family::Extended) {
    for (int c : cells_) {
      if (c == 0) continue;
      const int level = family.level_of(c);
      bool seen = false;
      for (int xi : X_) seen = seen || xi == level;
      if (!seen)
        throw DataError("binary level " + std::to_string(level) +
                        " has incomplete records but no complete record");
    }
  }
}

void ProfileSolver::cell_matrix(const Vector& beta, Matrix& C, Vector& g, double& binom_part) const {
  const int m = this->m();
  const int K = family_.occasions();
  const Vector eta = Z_ * beta;
  C.resize(m, static_cast<Eigen::Index>(cells_.size()));
  g.resize(m);
  binom_part = 0.0;
  std::vector<double> probs;
  for (int i = 0; i < m; ++i) {
    const double lg = log_sigmoid(eta[i]);
    binom_part += D_[i] * lg + (K - D_[i]) * (lg - eta[i]);
    g[i] = std::exp(lg);
    capture_count_probs(g[i], K, probs);
    for (std::size_t j = 0; j < cells_.size(); ++j) {
      const int c = cells_[j];
      const int level = family_.level_of(c);
      C(i, j) = (level < 0 || level == X_[i]) ? probs[family_.captures_of(c)] : 0.0;
    }
  }
}

bool ProfileSolver::solve_weights(double nu, const Matrix& C, Vector& w) const {
  const Eigen::Index q = C.cols();
  const Eigen::Index m = C.rows();
  // Cell 0 carries m_0 = nu - n and leaves the problem when nu == n.
  const bool with_zero = nu > n_;
  const Eigen::Index off = with_zero ? 0 : 1;
  const Eigen::Index qj = q - off;
  Vector counts = cell_counts_;
  counts[0] = nu - n_;
  const Vector mv = counts.tail(qj);
  const auto Cj = C.rightCols(qj);

  auto slack = [&](const Vector& wj, Vector& s) {
    s = Vector::Constant(m, nu) - Cj * wj;
    return (s.array() > 0.0).all();
  };
  auto phi = [&](const Vector& wj, const Vector& s) {
    return -s.array().log().sum() - (mv.array() * wj.array().log()).sum();
  };

  Vector wj(qj);
  Vector s(m);
  bool warm = w.size() == q;
  if (warm) {
    wj = w.tail(qj);
    warm = (wj.array() > 0.0).all() && wj.allFinite() && slack(wj, s);
  }
  if (!warm) {
    const Vector mean = Cj.colwise().mean().transpose();
    for (Eigen::Index j = 0; j < qj; ++j) {
      if (!(mean[j] > 0.0)) return false;
      wj[j] = mv[j] / mean[j];
    }
    const double top = (Cj * wj).maxCoeff();
    if (top > 0.5 * nu) wj *= 0.5 * nu / top;
    if (!slack(wj, s)) return false;
  }

  if (qj > 0) {
    double f = phi(wj, s);
    Matrix H(qj, qj);
    bool done = false;
    for (int iter = 0; iter < 100; ++iter) {
      const Vector r = s.cwiseInverse();
      const Vector G = Cj.transpose() * r - mv.cwiseQuotient(wj);
      H.noalias() = Cj.transpose() * r.cwiseAbs2().asDiagonal() * Cj;
      H.diagonal() += mv.cwiseQuotient(wj.cwiseAbs2());
      Eigen::LLT<Matrix> llt(H);
      if (llt.info() != Eigen::Success) return false;
      const Vector d = -llt.solve(G);
      const double dec2 = -G.dot(d);
      if (!(dec2 >= 0.0) || !std::isfinite(dec2)) return false;
      if (dec2 < 1e-22) {
        done = true;
        break;
      }
      double step = dec2 > 0.0625 ? 1.0 / (1.0 + std::sqrt(dec2)) : 1.0;
      bool moved = false;
      for (int halving = 0; halving < 60; ++halving, step *= 0.5) {
        const Vector trial = wj + step * d;
        Vector st;
        if (!(trial.array() > 0.0).all() || !slack(trial, st)) continue;
        const double ft = phi(trial, st);
        if (dec2 > 1e-10 && !(ft <= f)) continue;
        wj = trial;
        s = st;
        f = ft;
        moved = true;
        break;
      }
      if (!moved) {
        done = dec2 < 1e-14;
        break;
      }
    }
    if (!done) return false;
  }
  w.resize(q);
  if (!with_zero) w[0] = 0.0;
  w.tail(qj) = wj;
  return w.allFinite();
}

bool ProfileSolver::evaluate(double nu, const Vector& beta, Vector& w, Evaluation& out) const {
  if (!beta.allFinite()) return false;
  Matrix C;
  Vector g;
  double binom_part = 0.0;
  cell_matrix(beta, C, g, binom_part);
  if (!solve_weights(nu, C, w)) return false;

  const int m = this->m();
  const int K = family_.occasions();
  const Vector s = Vector::Constant(m, nu) - C * w;
  const Vector p = s.cwiseInverse();
  double value = log_choose(nu, n_) + binom_part + (m * p).array().log().sum();
  for (std::size_t j = 1; j < cells_.size(); ++j)
    value += cell_counts_[j] * std::log(cell_counts_[j] / w[j]);
  out.gamma0 = nu > n_ ? (nu - n_) / w[0] : p.dot(C.col(0));
  if (nu > n_) value += (nu - n_) * std::log(out.gamma0);

  Vector a(m);
  for (int i = 0; i < m; ++i) {
    double el = 0.0;
    for (Eigen::Index j = 0; j < C.cols(); ++j) el += w[j] * C(i, j) * (cell_captures_[j] - K * g[i]);
    a[i] = (D_[i] - K * g[i]) + p[i] * el;
  }
  out.grad_beta = Z_.transpose() * a;
  out.dnu = boost::math::digamma(nu + 1.0) - boost::math::digamma(nu - n_ + 1.0) + std::log(out.gamma0);
  out.value = value;
  return std::isfinite(value) && out.grad_beta.allFinite();
}

ProfileSolver::MiddleResult ProfileSolver::maximize(double nu, const State& start,
                                                    const std::vector<bool>& free,
                                                    const MiddleOptions& options) const {
  const int p = dim();
  MiddleResult res;
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> jitter(0.0, 0.5);

  for (int attempt = 0; attempt <= options.restarts; ++attempt) {
    Vector beta = start.beta;
    Vector w = attempt == 0 ? start.w : Vector();
    if (attempt > 0)
      for (int j = 0; j < p; ++j)
        if (free[j]) beta[j] += jitter(rng);
    Evaluation ev;
    if (!evaluate(nu, beta, w, ev)) continue;

    bool failed = false;
    int iter = 0;
    for (; iter < options.max_iter; ++iter) {
      const double gnorm = inf_norm_free(ev.grad_beta, free);
      if (gnorm <= options.grad_tol) {
        res.converged = true;
        break;
      }
      // Hessian by central differences of the analytic gradient.
      Matrix H = Matrix::Zero(p, p);
      for (int j = 0; j < p; ++j) {
        if (!free[j]) continue;
        const double h = 1e-5 * (1.0 + std::abs(beta[j]));
        Vector bp = beta, bm = beta, wp = w, wm = w;
        bp[j] += h;
        bm[j] -= h;
        Evaluation ep, em;
        if (!evaluate(nu, bp, wp, ep) || !evaluate(nu, bm, wm, em)) {
          failed = true;
          break;
        }
        H.col(j) = (ep.grad_beta - em.grad_beta) / (2.0 * h);
      }
      if (failed) break;
      for (int j = 0; j < p; ++j)
        if (!free[j]) {
          H.row(j).setZero();
          H.col(j).setZero();
          H(j, j) = -1.0;
        }
      H = 0.5 * (H + H.transpose());
      Eigen::SelfAdjointEigenSolver<Matrix> eig(H);
      Vector ev_abs = eig.eigenvalues().cwiseAbs();
      const double floor = std::max(ev_abs.maxCoeff() * 1e-10, 1e-12);
      ev_abs = ev_abs.cwiseMax(floor);
      Vector g = ev.grad_beta;
      for (int j = 0; j < p; ++j)
        if (!free[j]) g[j] = 0.0;
      Vector d = eig.eigenvectors() * (eig.eigenvectors().transpose() * g).cwiseQuotient(ev_abs);
      const double dmax = d.cwiseAbs().maxCoeff();
      if (dmax > 2.0) d *= 2.0 / dmax;
      const double slope = g.dot(d);

      double step = 1.0;
      bool moved = false;
      for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
        const Vector trial = beta + step * d;
        Vector wt = w;
        Evaluation et;
        if (!evaluate(nu, trial, wt, et)) continue;
        const bool armijo = et.value >= ev.value + 1e-4 * step * slope;
        const bool flat = et.value >= ev.value - 1e-12 * (1.0 + std::abs(ev.value)) &&
                          inf_norm_free(et.grad_beta, free) < gnorm;
        if (armijo || flat) {
          beta = trial;
          w = wt;
          ev = et;
          moved = true;
          break;
        }
      }
      if (!moved) {
        res.converged = gnorm <= 1e3 * options.grad_tol;
        break;
      }
    }
    if (failed) continue;
    res.state = {beta, w};
    res.eval = ev;
    res.iterations = iter;
    res.ok = true;
    if (res.converged) return res;
  }
  return res;
}

ProfileSolver::PointDetail ProfileSolver::detail(double nu, const Vector& beta, const Vector& w) const {
  Matrix C;
  Vector g;
  double binom_part = 0.0;
  cell_matrix(beta, C, g, binom_part);
  const int m = this->m();
  const Vector p = (Vector::Constant(m, nu) - C * w).cwiseInverse();
  PointDetail out;
  out.weights = p;
  out.lambda = -w / static_cast<double>(m);
  out.gamma = Vector::Zero(family_.cell_count());
  std::vector<double> probs;
  for (int i = 0; i < m; ++i) {
    cell_probs(g[i], family_, family_.tag() == Family::Extended ? std::optional<int>(X_[i]) : std::nullopt,
               probs);
    for (int c = 0; c < family_.cell_count(); ++c) out.gamma[c] += p[i] * probs[c];
  }
  return out;
}

Vector ProfileSolver::initial_beta() const {
  const int p = dim();
  const int K = family_.occasions();
  const Vector Dv = D_.cast<double>();
  const double mean_rate = std::clamp(Dv.mean() / K, 0.01, 0.99);
  Vector fallback = Vector::Zero(p);
  fallback[0] = std::log(mean_rate / (1.0 - mean_rate));

  auto loglik = [&](const Vector& b) {
    const Vector eta = Z_ * b;
    double total = 0.0;
    for (int i = 0; i < m(); ++i) {
      const double lg = log_sigmoid(eta[i]);
      total += Dv[i] * lg + (K - Dv[i]) * (lg - eta[i]);
    }
    return total;
  };
  Vector beta = fallback;
  double f = loglik(beta);
  for (int iter = 0; iter < 50; ++iter) {
    const Vector eta = Z_ * beta;
    Vector resid(m()), wt(m());
    for (int i = 0; i < m(); ++i) {
      const double g = std::exp(log_sigmoid(eta[i]));
      resid[i] = Dv[i] - K * g;
      wt[i] = K * g * (1.0 - g);
    }
    const Vector grad = Z_.transpose() * resid;
    if (grad.cwiseAbs().maxCoeff() < 1e-10) break;
    const Matrix info = Z_.transpose() * wt.asDiagonal() * Z_;
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success) return fallback;
    const Vector d = ldlt.solve(grad);
    double step = 1.0;
    bool moved = false;
    for (int h = 0; h < 30; ++h, step *= 0.5) {
      const Vector trial = beta + step * d;
      const double ft = loglik(trial);
      if (ft >= f) {
        beta = trial;
        f = ft;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  return beta.allFinite() && beta.cwiseAbs().maxCoeff() < 50.0 ? beta : fallback;
}

}  // namespace elcr::detail
