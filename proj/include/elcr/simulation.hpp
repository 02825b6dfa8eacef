#pragma once

// Monte Carlo harness: data generation under the benchmark scenarios,
// replicated fitting, and aggregation into bias / RMSE / coverage.

#include "elcr/model_core.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace elcr {

struct ScenarioConfig {
  std::string name = "custom";
  int occasions = 2;
  int nu0 = 200;
  bool binary = false;              // Z = (1, X, Y) with X ~ Bernoulli(binary_prob)
  double binary_prob = 0.3;
  double y_low = 0.0;               // Y ~ Uniform(y_low, y_high)
  double y_high = 3.0;
  Vector beta;                      // (intercept, [x], y)
  // pr(R = 1 | x, k) = 1 / (1 + exp(sel_intercept - sel_binary * x - sel_captures * k))
  double sel_intercept = 0.5;
  double sel_binary = 0.0;
  double sel_captures = 0.7;
  int replications = 1000;
  std::uint64_t seed = 1;
  std::vector<double> levels{0.90, 0.95, 0.99};
  bool intervals = true;
  bool complete_case = true;
  bool ratio_at_truth = true;
  bool asymptotics = false;         // plug-in W and the log-scale Wald interval

  Family family() const { return binary ? Family::Extended : Family::Base; }
  void validate() const;
};

/// Scenario 'A'..'D' at abundance nu0; 'F' is a 17-occasion field-study design.
ScenarioConfig scenario(char tag, int nu0);

/// Seed of replication `index` derived from the master seed.
std::uint64_t replication_seed(std::uint64_t master, int index);

CaptureDataset generate(const ScenarioConfig& config, std::uint64_t seed);

struct EstimatorStats {
  int count = 0;
  double mean = 0.0;
  double bias = 0.0;
  double rmse = 0.0;    // E(nu - nu0)^2 / nu0
};

struct CoverageStats {
  double level = 0.0;
  int count = 0;
  double two_sided = 0.0;
  double lower = 0.0;   // [nu_L, inf) at nominal level
  double upper = 0.0;   // [n, nu_U] at nominal level
  double se_two_sided = 0.0;
  double se_lower = 0.0;
  double se_upper = 0.0;
  double mean_lower = 0.0;
  double mean_upper = 0.0;
  int capped = 0;
};

struct ReplicationOutcome {
  bool ok = false;
  std::string error;
  int n = 0;
  int m = 0;
  double nu_hat = 0.0;
  bool nu_capped = false;
  std::optional<double> cc_nu_hat;
  std::vector<std::pair<double, double>> intervals;   // two-sided, per level
  std::vector<std::pair<double, double>> one_sided;   // (nu_L, nu_U) of the level 2L-1 interval
  std::vector<bool> interval_capped;
  std::optional<double> ratio_at_truth;
  std::optional<double> cov_lognu;                    // plug-in W^{-1}[0,0]
  std::vector<std::pair<double, double>> wald;        // per level
  std::vector<std::pair<double, double>> wald_one_sided;
};

struct MetricsReport {
  ScenarioConfig config;
  int replications = 0;
  int failures = 0;
  EstimatorStats proposed;
  std::optional<EstimatorStats> complete_case;
  std::vector<CoverageStats> coverage;
  std::vector<CoverageStats> wald_coverage;
  std::vector<double> nu_hat;
  std::vector<double> ratio_at_truth;
  double mean_n = 0.0;
  double mean_missing_rate = 0.0;
  // sqrt(nu0) log(nu_hat / nu0): empirical variance vs mean plug-in W^{-1}[0,0]
  std::optional<double> lognu_variance;
  std::optional<double> mean_cov_lognu;
};

ReplicationOutcome run_replication(const ScenarioConfig& config, int index);

/// Replications run on `threads` workers (0 = ELCR_THREADS or hardware).
/// Results do not depend on the thread count.
MetricsReport run_study(const ScenarioConfig& config, int threads = 0);

MetricsReport aggregate(const ScenarioConfig& config, const std::vector<ReplicationOutcome>& outcomes);

/// (empirical quantile, chi-square(1) quantile at (i - 0.5)/N) pairs.
std::vector<std::pair<double, double>> qq_export(const std::vector<double>& sample);

/// Kolmogorov-Smirnov distance between the sample and chi-square(1).
double ks_distance_chi2_1(const std::vector<double>& sample);

int default_thread_count();

}  // namespace elcr
