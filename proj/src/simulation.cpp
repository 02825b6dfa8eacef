#include "elcr/simulation.hpp"

#include "elcr/asymptotics.hpp"
#include "elcr/error.hpp"
#include "elcr/estimator.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <thread>

namespace elcr {

void ScenarioConfig::validate() const {
  if (nu0 < 1) throw std::invalid_argument("nu0 must be at least 1");
  if (replications < 1) throw std::invalid_argument("replication count must be at least 1");
  if (occasions < 1 || occasions > kMaxOccasions) throw std::invalid_argument("occasions out of range");
  if (beta.size() != (binary ? 3 : 2)) throw std::invalid_argument("beta must be (intercept, [x], y)");
  if (!(y_high > y_low)) throw std::invalid_argument("covariate range is empty");
  if (!(binary_prob >= 0.0 && binary_prob <= 1.0)) throw std::invalid_argument("binary probability outside [0,1]");
  for (double l : levels)
    if (!(l > 0.0 && l < 1.0)) throw std::invalid_argument("confidence level must be in (0,1)");
}

ScenarioConfig scenario(char tag, int nu0) {
  ScenarioConfig c;
  c.name = std::string(1, tag);
  c.nu0 = nu0;
  switch (tag) {
    case 'A':
    case 'B':
      c.occasions = tag == 'A' ? 2 : 5;
      c.binary = false;
      c.beta = Vector(2);
      c.beta << -2.0, 1.0;
      c.sel_binary = 0.0;
      break;
    case 'C':
    case 'D':
      c.occasions = tag == 'C' ? 2 : 5;
      c.binary = true;
      c.beta = Vector(3);
      c.beta << -2.0, 1.0, 1.0;
      c.sel_binary = 0.7;
      break;
    case 'F':
      // Field-study-like design: 17 occasions, low per-occasion capture
      // probability, about a quarter of the continuous covariate missing.
      c.occasions = 17;
      c.binary = true;
      c.binary_prob = 0.4;
      c.y_low = 55.0;
      c.y_high = 85.0;
      c.beta = Vector(3);
      c.beta << -10.667, 1.0141, 0.0832;
      c.sel_intercept = -0.7;
      c.sel_binary = 0.0;
      c.sel_captures = 0.3;
      break;
    default:
      throw std::invalid_argument(std::string("unknown scenario ") + tag);
  }
  return c;
}

std::uint64_t replication_seed(std::uint64_t master, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), 0x9e3779b9u};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

CaptureDataset generate(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ydist(config.y_low, config.y_high);
  std::bernoulli_distribution xdist(config.binary_prob);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int K = config.occasions;
  std::vector<Record> records;
  for (int i = 0; i < config.nu0; ++i) {
    const int x = config.binary && xdist(rng) ? 1 : 0;
    const double y = ydist(rng);
    Vector z(config.binary ? 3 : 2);
    if (config.binary)
      z << 1.0, x, y;
    else
      z << 1.0, y;
    const double g = capture_prob(z, config.beta);
    std::binomial_distribution<int> ddist(K, g);
    const int d = ddist(rng);
    const double u = unit(rng);
    if (d == 0) continue;
    const double h = 1.0 / (1.0 + std::exp(config.sel_intercept - config.sel_binary * x - config.sel_captures * d));
    Record r;
    r.d = d;
    if (config.binary) r.x = x;
    if (u < h) r.z = std::move(z);
    records.push_back(std::move(r));
  }
  // Complete records first, matching the usual data layout.
  std::stable_partition(records.begin(), records.end(), [](const Record& r) { return r.complete(); });
  return CaptureDataset(K, std::move(records));
}

ReplicationOutcome run_replication(const ScenarioConfig& config, int index) {
  ReplicationOutcome out;
  try {
    const CaptureDataset data = generate(config, replication_seed(config.seed, index));
    out.n = data.n();
    out.m = data.m();
    ProfileLikelihood pl(data, config.family());
    const FitResult& fit = pl.fit();
    out.nu_hat = fit.nu_hat;
    out.nu_capped = fit.nu_capped;
    if (config.intervals) {
      for (double level : config.levels) {
        const IntervalResult ci = pl.confidence_interval(level);
        out.intervals.emplace_back(ci.lower, ci.upper);
        out.interval_capped.push_back(ci.upper_capped);
        // A one-sided limit at level L is an endpoint of the two-sided 2L-1 interval.
        if (level > 0.5) {
          const IntervalResult one = pl.confidence_interval(2.0 * level - 1.0);
          out.one_sided.emplace_back(one.lower, one.upper);
        } else {
          out.one_sided.emplace_back(data.n(), INFINITY);
        }
      }
    }
    if (config.ratio_at_truth) out.ratio_at_truth = config.nu0 >= data.n() ? pl.ratio_profile(config.nu0) : INFINITY;
    if (config.asymptotics) {
      const WBlocks wb = estimate_W(fit, data, config.family());
      out.cov_lognu = wb.covariance(0, 0);
      for (double level : config.levels) {
        const WaldInterval wi = wald_interval_lognu(fit, wb, level);
        out.wald.emplace_back(wi.lower, wi.upper);
        const WaldInterval one = wald_interval_lognu(fit, wb, std::max(2.0 * level - 1.0, 1e-12));
        out.wald_one_sided.emplace_back(one.lower, one.upper);
      }
    }
    if (config.complete_case) out.cc_nu_hat = fit_complete_case(data, config.family()).nu_hat;
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

EstimatorStats estimator_stats(const std::vector<double>& values, double nu0) {
  EstimatorStats s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sq = 0.0;
  for (double v : values) sq += (v - nu0) * (v - nu0);
  s.mean = mean_of(values);
  s.bias = s.mean - nu0;
  s.rmse = sq / values.size() / nu0;
  return s;
}

CoverageStats coverage_stats(double level, double nu0, const std::vector<double>& lower,
                             const std::vector<double>& upper, const std::vector<double>& one_lower,
                             const std::vector<double>& one_upper, int capped) {
  CoverageStats c;
  c.level = level;
  c.count = static_cast<int>(lower.size());
  c.capped = capped;
  if (lower.empty()) return c;
  int two = 0, lo = 0, up = 0;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    two += lower[i] <= nu0 && nu0 <= upper[i];
    lo += one_lower[i] <= nu0;
    up += nu0 <= one_upper[i];
  }
  const double N = static_cast<double>(lower.size());
  auto se = [N](double p) { return std::sqrt(p * (1.0 - p) / N); };
  c.two_sided = two / N;
  c.lower = lo / N;
  c.upper = up / N;
  c.se_two_sided = se(c.two_sided);
  c.se_lower = se(c.lower);
  c.se_upper = se(c.upper);
  c.mean_lower = mean_of(lower);
  c.mean_upper = mean_of(upper);
  return c;
}

}  // namespace

MetricsReport aggregate(const ScenarioConfig& config, const std::vector<ReplicationOutcome>& outcomes) {
  MetricsReport rep;
  rep.config = config;
  rep.replications = static_cast<int>(outcomes.size());
  const double nu0 = config.nu0;
  std::vector<double> cc, logdev, cov;
  double n_sum = 0.0, miss_sum = 0.0;
  int ok = 0;
  for (const ReplicationOutcome& o : outcomes) {
    if (!o.ok) {
      ++rep.failures;
      continue;
    }
    ++ok;
    rep.nu_hat.push_back(o.nu_hat);
    n_sum += o.n;
    miss_sum += o.n > 0 ? 1.0 - static_cast<double>(o.m) / o.n : 0.0;
    if (o.cc_nu_hat) cc.push_back(*o.cc_nu_hat);
    if (o.ratio_at_truth) rep.ratio_at_truth.push_back(*o.ratio_at_truth);
    logdev.push_back(std::sqrt(nu0) * std::log(o.nu_hat / nu0));
    if (o.cov_lognu) cov.push_back(*o.cov_lognu);
  }
  rep.mean_n = ok ? n_sum / ok : 0.0;
  rep.mean_missing_rate = ok ? miss_sum / ok : 0.0;
  rep.proposed = estimator_stats(rep.nu_hat, nu0);
  if (config.complete_case) rep.complete_case = estimator_stats(cc, nu0);

  auto collect = [&](bool wald) {
    std::vector<CoverageStats> out;
    for (std::size_t l = 0; l < config.levels.size(); ++l) {
      std::vector<double> lo, up, one_lo, one_up;
      int capped = 0;
      for (const ReplicationOutcome& o : outcomes) {
        if (!o.ok) continue;
        const auto& iv = wald ? o.wald : o.intervals;
        const auto& one = wald ? o.wald_one_sided : o.one_sided;
        if (l >= iv.size() || l >= one.size()) continue;
        lo.push_back(iv[l].first);
        up.push_back(iv[l].second);
        one_lo.push_back(one[l].first);
        one_up.push_back(one[l].second);
        if (!wald && l < o.interval_capped.size() && o.interval_capped[l]) ++capped;
      }
      if (!lo.empty()) out.push_back(coverage_stats(config.levels[l], nu0, lo, up, one_lo, one_up, capped));
    }
    return out;
  };
  if (config.intervals) rep.coverage = collect(false);
  if (config.asymptotics) {
    rep.wald_coverage = collect(true);
    if (logdev.size() > 1) {
      const double mu = mean_of(logdev);
      double ss = 0.0;
      for (double v : logdev) ss += (v - mu) * (v - mu);
      rep.lognu_variance = ss / (logdev.size() - 1);
    }
    if (!cov.empty()) rep.mean_cov_lognu = mean_of(cov);
  }
  return rep;
}

int default_thread_count() {
  if (const char* env = std::getenv("ELCR_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

MetricsReport run_study(const ScenarioConfig& config, int threads) {
  config.validate();
  if (threads <= 0) threads = default_thread_count();
  threads = std::min(threads, config.replications);
  std::vector<ReplicationOutcome> outcomes(config.replications);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < config.replications; i = next++) outcomes[i] = run_replication(config, i);
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return aggregate(config, outcomes);
}

std::vector<std::pair<double, double>> qq_export(const std::vector<double>& sample) {
  if (sample.empty()) throw std::invalid_argument("qq_export: empty sample");
  std::vector<double> sorted = sample;
  std::sort(sorted.begin(), sorted.end());
  const boost::math::chi_squared_distribution<double> chi2(1.0);
  const double N = static_cast<double>(sorted.size());
  std::vector<std::pair<double, double>> rows;
  rows.reserve(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    rows.emplace_back(sorted[i], boost::math::quantile(chi2, (i + 0.5) / N));
  return rows;
}

double ks_distance_chi2_1(const std::vector<double>& sample) {
  if (sample.empty()) throw std::invalid_argument("ks distance: empty sample");
  std::vector<double> sorted = sample;
  std::sort(sorted.begin(), sorted.end());
  const boost::math::chi_squared_distribution<double> chi2(1.0);
  const double N = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double x = sorted[i];
    const double F = std::isfinite(x) ? (x > 0.0 ? boost::math::cdf(chi2, x) : 0.0) : 1.0;
    d = std::max({d, std::abs((i + 1) / N - F), std::abs(F - i / N)});
  }
  return d;
}

}  // namespace elcr
