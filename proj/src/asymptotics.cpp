#include "elcr/asymptotics.hpp"

#include "elcr/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>

namespace elcr {

namespace {

// Moore-Penrose inverse with a relative singular-value cutoff.
Matrix pseudo_inverse(const Matrix& A, double rcond) {
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index j = 0; j < s.size(); ++j)
    if (s[j] > rcond * s[0]) inv[j] = 1.0 / s[j];
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

double condition_number(const Matrix& A) {
  Eigen::JacobiSVD<Matrix> svd(A);
  const Vector& s = svd.singularValues();
  const double smin = s[s.size() - 1];
  return smin > 0.0 ? s[0] / smin : std::numeric_limits<double>::infinity();
}

}  // namespace

SelectionEstimate estimate_h(const CaptureDataset& dataset, const ModelFamily& family) {
  const int cells = family.cell_count();
  SelectionEstimate est;
  est.complete.assign(cells, 0);
  est.total.assign(cells, 0);
  for (const Record& r : dataset.records()) {
    const int c = family.cell_index(family.tag() == Family::Extended ? r.x.value_or(0) : 0, r.d);
    ++est.total[c];
    if (r.complete()) ++est.complete[c];
  }
  est.h = Vector::Zero(cells);
  est.defined.assign(cells, false);
  for (int c = 1; c < cells; ++c) {
    if (est.total[c] == 0) continue;
    est.defined[c] = true;
    est.h[c] = static_cast<double>(est.complete[c]) / est.total[c];
  }
  return est;
}

SelectionProb selection_prob(const VectorRef& z, std::optional<int> x, const VectorRef& beta,
                             const VectorRef& h, const ModelFamily& family) {
  const int K = family.occasions();
  if (h.size() != family.cell_count()) throw std::invalid_argument("selection_prob: h dimension mismatch");
  const double g = capture_prob(z, beta);
  std::vector<double> probs;
  cell_probs(g, family, x, probs);
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (int c = 1; c < family.cell_count(); ++c) {
    const double a = h[c] * probs[c];
    const double e = family.captures_of(c) - K * g;
    s0 += a;
    s1 += a * e;
    s2 += a * (e * e - K * g * (1.0 - g));
  }
  SelectionProb out;
  out.pi = s0;
  out.grad = s1 * z;
  out.hess = s2 * z * z.transpose();
  return out;
}

Matrix constraint_jacobian(const VectorRef& z, std::optional<int> x, const VectorRef& beta,
                           const ModelFamily& family, const std::vector<int>& cells) {
  const int K = family.occasions();
  const double g = capture_prob(z, beta);
  std::vector<double> probs;
  cell_probs(g, family, x, probs);
  Matrix J(z.size(), static_cast<Eigen::Index>(cells.size()));
  for (std::size_t j = 0; j < cells.size(); ++j)
    J.col(j) = probs[cells[j]] * (family.captures_of(cells[j]) - K * g) * z;
  return J;
}

WBlocks estimate_W(const FitResult& fit, const CaptureDataset& dataset, Family family_tag) {
  const ModelFamily family = family_for(dataset, family_tag);
  const int K = family.occasions();
  const int p = dataset.covariate_dim();
  WBlocks wb;
  for (int c = 0; c < family.cell_count(); ++c)
    if (fit.mask.empty() || fit.mask[c]) wb.cells.push_back(c);
  const int q = static_cast<int>(wb.cells.size());
  const Vector& gamma = fit.alpha_hat;
  const double gamma0 = gamma[0];
  if (!(gamma0 > 0.0 && gamma0 < 1.0)) throw OptimizationError("estimate_W: gamma_0 outside (0,1)");

  const SelectionEstimate sel = estimate_h(dataset, family);
  wb.h = sel.h;
  double observed_mass = 0.0;
  for (int c = 1; c < family.cell_count(); ++c) observed_mass += sel.h[c] * gamma[c];
  wb.lambda00 = -1.0 / observed_mass;
  const double inv_l = 1.0 / wb.lambda00;

  wb.H1.resize(q);
  wb.H2 = Matrix::Zero(q, q);
  for (int j = 0; j < q; ++j) {
    const int c = wb.cells[j];
    if (c == 0) {
      wb.H1[j] = 1.0;
      wb.H2(j, j) = 1.0 / gamma0;
    } else {
      wb.H1[j] = 1.0 - sel.h[c];
      wb.H2(j, j) = (1.0 - sel.h[c]) / gamma[c];
    }
  }

  double e_inv_pi = 0.0;
  Vector e_dpi = Vector::Zero(p);
  Vector e_u = Vector::Zero(q);
  Matrix acc33 = Matrix::Zero(p, p);
  Matrix acc34 = Matrix::Zero(p, q);
  Matrix acc44 = Matrix::Zero(q, q);
  std::vector<double> probs;
  int i = 0;
  for (const Record& r : dataset.records()) {
    if (!r.complete()) continue;
    const double w = fit.weights[i++];
    const Vector& z = *r.z;
    const std::optional<int> x = family.tag() == Family::Extended ? r.x : std::nullopt;
    const SelectionProb sp = selection_prob(z, x, fit.beta_hat, sel.h, family);
    if (!(sp.pi > 1e-12)) throw OptimizationError("estimate_W: selection probability vanishes at a complete record");
    const double g = capture_prob(z, fit.beta_hat);
    cell_probs(g, family, x, probs);
    Vector u(q);
    for (int j = 0; j < q; ++j) u[j] = probs[wb.cells[j]] - gamma[wb.cells[j]];
    const Matrix J = constraint_jacobian(z, x, fit.beta_hat, family, wb.cells);

    e_inv_pi += w / sp.pi;
    e_dpi += w * sp.grad / sp.pi;
    e_u += w * u / sp.pi;
    acc33 += w * (sp.hess - sp.grad * sp.grad.transpose() / sp.pi +
                  K * g * (1.0 - g) * sp.pi * z * z.transpose());
    acc34 += w * (J - sp.grad * u.transpose() / sp.pi);
    acc44 += w * u * u.transpose() / sp.pi;
  }

  wb.V11 = 1.0 / gamma0 - 1.0;
  wb.V12 = Vector::Zero(q);
  wb.V12[0] = -1.0 / gamma0;
  wb.V22 = wb.H2 - e_inv_pi * wb.H1 * wb.H1.transpose();
  const Matrix V32 = -e_dpi * wb.H1.transpose();
  wb.V23 = V32.transpose();
  const Matrix V42 = inv_l * (Matrix::Identity(q, q) + e_u * wb.H1.transpose());
  wb.V24 = V42.transpose();
  wb.V33 = acc33;
  wb.V34 = -inv_l * acc34;
  wb.V44 = -inv_l * inv_l * acc44;
  wb.V44 = 0.5 * (wb.V44 + wb.V44.transpose());

  Matrix V44inv;
  if (condition_number(wb.V44) > 1e10) {
    wb.v44_singular = true;
    V44inv = pseudo_inverse(wb.V44, 1e-10);
  } else {
    V44inv = wb.V44.inverse();
  }
  V44inv = 0.5 * (V44inv + V44inv.transpose());
  const Matrix V43 = wb.V34.transpose();
  const int dim = 1 + q + p;
  wb.W = Matrix::Zero(dim, dim);
  wb.W(0, 0) = wb.V11;
  wb.W.block(0, 1, 1, q) = wb.V12.transpose();
  wb.W.block(1, 0, q, 1) = wb.V12;
  wb.W.block(1, 1, q, q) = wb.V22 - wb.V24 * V44inv * V42;
  wb.W.block(1, 1 + q, q, p) = wb.V23 - wb.V24 * V44inv * V43;
  wb.W.block(1 + q, 1, p, q) = V32 - wb.V34 * V44inv * V42;
  wb.W.block(1 + q, 1 + q, p, p) = wb.V33 - wb.V34 * V44inv * V43;

  // Bordered system with the multiplier block kept explicit; its leading
  // block inverse equals W^{-1} whenever V44 is invertible.
  Matrix M = Matrix::Zero(dim + q, dim + q);
  M.topLeftCorner(dim, dim) = wb.W;
  M.block(1, 1, q, q) = wb.V22;
  M.block(1, 1 + q, q, p) = wb.V23;
  M.block(1 + q, 1, p, q) = V32;
  M.block(1 + q, 1 + q, p, p) = wb.V33;
  M.block(1, dim, q, q) = wb.V24;
  M.block(dim, 1, q, q) = V42;
  M.block(1 + q, dim, p, q) = wb.V34;
  M.block(dim, 1 + q, q, p) = V43;
  M.block(dim, dim, q, q) = wb.V44;
  M = 0.5 * (M + M.transpose());
  wb.condition = condition_number(M);
  Matrix Minv;
  if (wb.condition > 1e10) {
    wb.ill_conditioned = true;
    Minv = pseudo_inverse(M, 1e-12);
  } else {
    Minv = M.inverse();
  }
  wb.covariance = Minv.topLeftCorner(dim, dim);
  wb.covariance = 0.5 * (wb.covariance + wb.covariance.transpose());
  return wb;
}

WaldInterval wald_interval_lognu(const FitResult& fit, const WBlocks& blocks, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must be in (0,1)");
  const double var = blocks.covariance(0, 0);
  if (!(var > 0.0) || !std::isfinite(var)) throw OptimizationError("wald interval: non-positive variance");
  const double zq = boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * level);
  const double half = zq * std::sqrt(var / fit.nu_hat);
  WaldInterval out;
  out.level = level;
  out.lower = fit.nu_hat * std::exp(-half);
  out.upper = fit.nu_hat * std::exp(half);
  out.below_n = out.lower < fit.n;
  return out;
}

}  // namespace elcr
