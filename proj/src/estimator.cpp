#include "elcr/estimator.hpp"

#include "elcr/error.hpp"
#include "profile_solver.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace elcr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using detail::MiddleOptions;
using detail::ProfileSolver;

struct Cached {
  double nu;
  ProfileSolver::State state;
  double value;
};

}  // namespace

double chi2_1_quantile(double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must be in (0,1)");
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(1.0), level);
}

struct ProfileLikelihood::Impl {
  ProfileSolver solver;
  MiddleOptions middle;
  std::vector<Cached> cache;
  std::optional<FitResult> fit;

  Impl(const CaptureDataset& ds, const ModelFamily& fam, const FitOptions& opt)
      : solver(ds, fam), middle{opt.middle_grad_tol, opt.middle_max_iter, opt.restarts} {}

  double t_of(double nu) const { return std::log1p(nu - solver.n()); }

  const Cached* nearest(double nu) const {
    const Cached* best = nullptr;
    double dist = kInf;
    for (const Cached& c : cache) {
      const double d = std::abs(t_of(c.nu) - t_of(nu));
      if (d < dist) {
        dist = d;
        best = &c;
      }
    }
    return best;
  }

  FitResult run_fit(const std::vector<bool>& free, const Vector& beta_start, const FitOptions& options,
                    bool record) {
    const double n = solver.n();
    const double cap = std::max(n * options.nu_cap_factor, n + 1.0);
    const double t_cap = std::log1p(cap - n);
    auto nu_of = [n](double t) { return n + std::expm1(t); };

    struct GridPoint {
      double t;
      ProfileSolver::MiddleResult res;
    };
    std::vector<GridPoint> grid;
    ProfileSolver::State state{beta_start, Vector()};
    int evaluations = 0;
    std::size_t best = 0;
    for (double t = 0.0;; t = std::min(t + options.grid_step, t_cap)) {
      auto res = solver.maximize(nu_of(t), state, free, middle);
      ++evaluations;
      if (res.ok) {
        state = res.state;
        grid.push_back({t, res});
        if (record) cache.push_back({nu_of(t), res.state, res.eval.value});
        if (grid.back().res.eval.value > grid[best].res.eval.value) best = grid.size() - 1;
        const auto& top = grid[best];
        if (res.eval.value < top.res.eval.value - 10.0 && t - top.t >= 1.0) break;
      }
      if (t >= t_cap) break;
    }
    if (grid.empty()) throw OptimizationError("profile likelihood could not be evaluated at any abundance");

    double t_hat = grid[best].t;
    ProfileSolver::State warm = grid[best].res.state;
    bool capped = false;
    bool outer_ok = true;
    auto derivative = [&](double t) {
      auto res = solver.maximize(nu_of(t), warm, free, middle);
      ++evaluations;
      if (!res.ok) return std::numeric_limits<double>::quiet_NaN();
      warm = res.state;
      return res.eval.dnu;
    };

    const double d_best = grid[best].res.eval.dnu;
    if (best == 0 && d_best <= 0.0) {
      t_hat = 0.0;
    } else if (best + 1 == grid.size() && d_best > 0.0 && grid[best].t >= t_cap) {
      t_hat = t_cap;
      capped = true;
    } else {
      double lo, hi, dlo, dhi;
      if (d_best > 0.0 && best + 1 < grid.size()) {
        lo = grid[best].t, dlo = d_best;
        hi = grid[best + 1].t, dhi = grid[best + 1].res.eval.dnu;
      } else if (best > 0) {
        lo = grid[best - 1].t, dlo = grid[best - 1].res.eval.dnu;
        hi = grid[best].t, dhi = d_best;
      } else {
        lo = hi = grid[best].t, dlo = dhi = d_best;
      }
      if (dlo > 0.0 && dhi < 0.0) {
        boost::math::tools::eps_tolerance<double> tol(48);
        std::uintmax_t iters = 100;
        try {
          auto bracket = boost::math::tools::toms748_solve(
              [&](double t) {
                const double d = derivative(t);
                if (std::isnan(d)) throw OptimizationError("middle solve failed in root search");
                return d;
              },
              lo, hi, dlo, dhi, tol, iters);
          t_hat = 0.5 * (bracket.first + bracket.second);
        } catch (const OptimizationError&) {
          outer_ok = false;
        }
      } else {
        // Not bracketed by the derivative signs: fall back to a direct search.
        const double a = grid[best > 0 ? best - 1 : best].t;
        const double b = grid[std::min(best + 1, grid.size() - 1)].t;
        if (b > a) {
          std::uintmax_t iters = 200;
          auto r = boost::math::tools::brent_find_minima(
              [&](double t) {
                auto res = solver.maximize(nu_of(t), warm, free, middle);
                ++evaluations;
                if (!res.ok) return kInf;
                warm = res.state;
                return -res.eval.value;
              },
              a, b, 40, iters);
          t_hat = r.first;
        }
        outer_ok = false;
      }
    }

    const double nu_hat = nu_of(t_hat);
    auto final_res = solver.maximize(nu_hat, warm, free, middle);
    ++evaluations;
    if (!final_res.ok) {
      final_res = grid[best].res;
      t_hat = grid[best].t;
      outer_ok = false;
    }
    if (record) cache.push_back({nu_of(t_hat), final_res.state, final_res.eval.value});

    FitResult fit;
    fit.nu_hat = nu_of(t_hat);
    fit.beta_hat = final_res.state.beta;
    fit.loglik_max = final_res.eval.value;
    const auto pd = solver.detail(fit.nu_hat, final_res.state.beta, final_res.state.w);
    fit.alpha_hat = pd.gamma;
    fit.lambda_hat = pd.lambda;
    fit.weights = pd.weights;
    fit.nu_capped = capped;
    fit.middle_converged = final_res.converged;
    fit.outer_converged = outer_ok && !capped;
    fit.outer_evaluations = evaluations;
    fit.middle_iterations = final_res.iterations;
    Vector g = final_res.eval.grad_beta;
    for (Eigen::Index j = 0; j < g.size(); ++j)
      if (!free[j]) g[j] = 0.0;
    fit.grad_norm = g.cwiseAbs().maxCoeff();
    fit.dnu = final_res.eval.dnu;
    fit.nu_cap = cap;
    fit.n = static_cast<int>(n);
    fit.m = solver.m();
    return fit;
  }
};

ProfileLikelihood::ProfileLikelihood(CaptureDataset dataset, Family family, FitOptions options)
    : dataset_(std::move(dataset)),
      family_(family_for(dataset_, family)),
      counts_(summarize(dataset_, family_)),
      options_(options) {
  if (dataset_.m() == 0) throw DataError("no complete records: capture model is unidentifiable");
  if (dataset_.m() < dataset_.covariate_dim())
    throw DataError("fewer complete records than covariates");
  impl_ = std::make_unique<Impl>(dataset_, family_, options_);
}

ProfileLikelihood::~ProfileLikelihood() = default;
ProfileLikelihood::ProfileLikelihood(ProfileLikelihood&&) noexcept = default;
ProfileLikelihood& ProfileLikelihood::operator=(ProfileLikelihood&&) noexcept = default;

const FitResult& ProfileLikelihood::fit() {
  if (!impl_->fit) {
    FitResult fit = impl_->run_fit(std::vector<bool>(dataset_.covariate_dim(), true),
                                   impl_->solver.initial_beta(), options_, true);
    fit.mask = counts_.active;
    impl_->fit = std::move(fit);
  }
  return *impl_->fit;
}

ProfilePoint ProfileLikelihood::profile_at(double nu) {
  if (!(nu >= dataset_.n())) throw std::domain_error("profile: nu below the number of captured individuals");
  fit();
  const Cached* near = impl_->nearest(nu);
  ProfileSolver::State start = near ? near->state : ProfileSolver::State{impl_->fit->beta_hat, Vector()};
  auto res = impl_->solver.maximize(nu, start, std::vector<bool>(dataset_.covariate_dim(), true), impl_->middle);
  ProfilePoint pt;
  pt.nu = nu;
  if (!res.ok) {
    pt.loglik = -kInf;
    return pt;
  }
  impl_->cache.push_back({nu, res.state, res.eval.value});
  pt.loglik = res.eval.value;
  pt.beta = res.state.beta;
  pt.alpha = impl_->solver.detail(nu, res.state.beta, res.state.w).gamma;
  pt.converged = res.converged;
  return pt;
}

double ProfileLikelihood::ratio_profile(double nu) {
  const double top = fit().loglik_max;
  const ProfilePoint pt = profile_at(nu);
  const double r = 2.0 * (top - pt.loglik);
  return (r < 0.0 && r > -1e-8) ? 0.0 : r;
}

double ProfileLikelihood::ratio_full(double nu, const VectorRef& alpha, const VectorRef& beta) {
  const double top = fit().loglik_max;
  return 2.0 * (top - profile_loglik(nu, alpha, beta, dataset_, family_, counts_));
}

IntervalResult ProfileLikelihood::confidence_interval(double level) {
  const double threshold = chi2_1_quantile(level);
  const FitResult& f = fit();
  const double n = dataset_.n();
  IntervalResult out;
  out.level = level;
  out.nu_hat = f.nu_hat;

  auto excess = [&](double nu) {
    const double r = ratio_profile(nu);
    out.trace.emplace_back(nu, r);
    return r - threshold;
  };
  // Keep the side of the bracket that lies inside the interval.
  auto solve = [&](double a, double b, double fa, double fb, bool inside_is_a) {
    boost::math::tools::eps_tolerance<double> tol(44);
    std::uintmax_t iters = 200;
    auto br = boost::math::tools::toms748_solve(excess, a, b, fa, fb, tol, iters);
    return inside_is_a ? br.first : br.second;
  };

  const double at_n = f.nu_hat > n ? excess(n) : -threshold;
  if (at_n <= 0.0) {
    out.lower = n;
  } else {
    out.lower = solve(n, f.nu_hat, at_n, -threshold, false);
  }

  double step = std::max(f.nu_hat - n, 1.0);
  double hi = std::min(f.nu_hat + step, f.nu_cap);
  double at_hi = excess(hi);
  while (at_hi <= 0.0 && hi < f.nu_cap) {
    step *= 2.0;
    hi = std::min(f.nu_hat + step, f.nu_cap);
    at_hi = excess(hi);
  }
  if (at_hi <= 0.0) {
    out.upper = f.nu_cap;
    out.upper_capped = true;
  } else {
    out.upper = solve(f.nu_hat, hi, -threshold, at_hi, true);
  }
  std::sort(out.trace.begin(), out.trace.end());
  return out;
}

FitResult ProfileLikelihood::fit_with_fixed(int coef, double value) {
  const int p = dataset_.covariate_dim();
  if (coef < 0 || coef >= p) throw std::out_of_range("coefficient index out of range");
  std::vector<bool> free(p, true);
  free[coef] = false;
  Vector start = fit().beta_hat;
  start[coef] = value;
  FitResult r = impl_->run_fit(free, start, options_, false);
  r.mask = counts_.active;
  return r;
}

FitResult fit_mele(const CaptureDataset& dataset, Family family, const FitOptions& options) {
  ProfileLikelihood pl(dataset, family, options);
  return pl.fit();
}

FitResult fit_complete_case(const CaptureDataset& dataset, Family family, const FitOptions& options) {
  return fit_mele(dataset.complete_cases(), family, options);
}

double ratio_full(double nu, const VectorRef& alpha, const VectorRef& beta, const FitResult& fit,
                  const CaptureDataset& dataset, Family family) {
  const ModelFamily fam = family_for(dataset, family);
  const CellCounts counts = summarize(dataset, fam);
  return 2.0 * (fit.loglik_max - profile_loglik(nu, alpha, beta, dataset, fam, counts));
}

double ratio_profile(double nu, const CaptureDataset& dataset, Family family, const FitOptions& options) {
  ProfileLikelihood pl(dataset, family, options);
  return pl.ratio_profile(nu);
}

IntervalResult confidence_interval(const CaptureDataset& dataset, Family family, double level,
                                   const FitOptions& options) {
  ProfileLikelihood pl(dataset, family, options);
  return pl.confidence_interval(level);
}

LrtResult lrt_coefficient(const CaptureDataset& dataset, Family family, int coef, const FitOptions& options) {
  if (coef < 1 || coef >= dataset.covariate_dim())
    throw std::out_of_range("coefficient index must address a non-intercept covariate");
  ProfileLikelihood pl(dataset, family, options);
  LrtResult out;
  out.full = pl.fit();
  out.restricted = pl.fit_with_fixed(coef, 0.0);
  out.statistic = std::max(0.0, 2.0 * (out.full.loglik_max - out.restricted.loglik_max));
  out.p_value = boost::math::cdf(boost::math::complement(
      boost::math::chi_squared_distribution<double>(1.0), out.statistic));
  return out;
}

}  // namespace elcr
