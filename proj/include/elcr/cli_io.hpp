#pragma once

// CSV ingestion, JSON/CSV result serialization and the command driver
// behind the `elcr` executable.

#include "elcr/asymptotics.hpp"
#include "elcr/estimator.hpp"
#include "elcr/model_core.hpp"
#include "elcr/simulation.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace elcr {

inline constexpr int kSchemaVersion = 1;

/// Exit codes of `run`.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitOptimization = 3 };

struct CsvOptions {
  int occasions = 0;
  /// Covariate columns in model order.  Empty: every column that is not the
  /// capture count, an occasion column, the always-observed column or an
  /// intercept column.
  std::vector<std::string> covariates;
  std::optional<std::string> always_observed;
};

/// A parsed dataset together with the names of the z entries (intercept first).
struct CsvData {
  CaptureDataset dataset;
  std::vector<std::string> names;
};

/// Accepts a `d` column (captures 1..K) or occasion columns occ1..occK.
/// Empty cells, `NA` and `.` are missing markers.  Covariates are prefixed
/// with an intercept (a column named `intercept` is used when present and
/// must be complete); the always-observed column, when given, enters z
/// right after the intercept.
CsvData ingest_csv(std::istream& in, const CsvOptions& options);
CsvData ingest_csv(const std::string& path, const CsvOptions& options);

/// Canonical `d`-column CSV; `names` are the z entry names as returned by
/// ingest_csv.  Numbers are written with round-trip precision.
void write_csv(std::ostream& out, const CaptureDataset& dataset, const std::vector<std::string>& names,
               const std::optional<std::string>& always_observed = std::nullopt);

nlohmann::json fit_to_json(const FitResult& fit, const std::vector<std::string>& names);
nlohmann::json interval_to_json(const IntervalResult& ci);
nlohmann::json lrt_to_json(const LrtResult& lrt, const std::string& coefficient);
nlohmann::json report_to_json(const MetricsReport& report);

/// Structural check of a document produced by `run`; returns the list of
/// violations (empty when valid).
std::vector<std::string> validate_result_json(const nlohmann::json& doc);

void write_qq_csv(std::ostream& out, const std::vector<std::pair<double, double>>& points);

struct RunConfig {
  std::string command;                 // fit | test | simulate | qq | generate
  std::string data;
  Family family = Family::Base;
  int occasions = 0;
  std::vector<double> levels;          // default {0.95}
  std::optional<std::string> always_observed;
  std::vector<std::string> covariates;
  std::optional<std::string> coefficient;   // test: coefficient name
  char scenario = 'B';
  int nu0 = 200;
  int reps = 1000;
  std::uint64_t seed = 1;
  std::string out;
  std::string qq_out;
  bool complete_case = false;
  bool wald = false;
  int threads = 0;
  bool quiet = false;

  /// Throws std::invalid_argument on inconsistent flags.
  void validate() const;
};

/// Executes one command; human-readable output goes to `out`, diagnostics
/// to `err`.  Returns an ExitCode.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Parses the command line and calls `run`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace elcr
