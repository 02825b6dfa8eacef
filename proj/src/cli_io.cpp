#include "elcr/cli_io.hpp"

#include "elcr/error.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace elcr {

using nlohmann::json;

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') quoted = !quoted;
    if (ch == ',' && !quoted) {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell += ch;
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "."; }

double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw DataError(where + ": malformed number '" + s + "'");
  return v;
}

int parse_integer(const std::string& s, const std::string& where) {
  const double v = parse_number(s, where);
  if (v != std::floor(v) || std::abs(v) > 1e9) throw DataError(where + ": expected an integer, got '" + s + "'");
  return static_cast<int>(v);
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(finite_or_null(v[i]));
  return a;
}

std::string cell_label(const ModelFamily& family, int cell) {
  if (cell == 0) return "k=0";
  const std::string k = "k=" + std::to_string(family.captures_of(cell));
  return family.tag() == Family::Extended ? "x=" + std::to_string(family.level_of(cell)) + "," + k : k;
}

}  // namespace

CsvData ingest_csv(std::istream& in, const CsvOptions& options) {
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    header = split_row(line);
    break;
  }
  if (header.empty()) throw DataError("csv: missing header row");

  std::map<std::string, int> column;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) throw DataError("csv: empty column name at position " + std::to_string(j + 1));
    if (!column.emplace(header[j], static_cast<int>(j)).second)
      throw DataError("csv: duplicate column '" + header[j] + "'");
  }
  auto find = [&](const std::string& name) -> int {
    const auto it = column.find(name);
    return it == column.end() ? -1 : it->second;
  };

  // Capture history: a count column or K occasion columns.
  const int d_col = find("d");
  std::vector<int> occ_cols;
  for (int k = 1;; ++k) {
    const int c = find("occ" + std::to_string(k));
    if (c < 0) break;
    occ_cols.push_back(c);
  }
  int K = options.occasions;
  if (d_col >= 0 && !occ_cols.empty()) throw DataError("csv: both a 'd' column and occasion columns are present");
  if (d_col < 0 && occ_cols.empty()) throw DataError("csv: need a 'd' column or occasion columns occ1..occK");
  if (d_col < 0) {
    if (K == 0) K = static_cast<int>(occ_cols.size());
    if (K != static_cast<int>(occ_cols.size()))
      throw DataError("csv: " + std::to_string(occ_cols.size()) + " occasion columns but K = " + std::to_string(K));
  } else if (K == 0) {
    throw DataError("csv: the number of occasions must be given for the 'd' column schema");
  }
  if (K < 1 || K > kMaxOccasions) throw DataError("csv: number of occasions must be in 1.." + std::to_string(kMaxOccasions));

  const int icol = find("intercept");
  int x_col = -1;
  if (options.always_observed) {
    x_col = find(*options.always_observed);
    if (x_col < 0) throw DataError("csv: always-observed column '" + *options.always_observed + "' not found");
  }
  std::vector<std::string> cov_names = options.covariates;
  if (cov_names.empty()) {
    for (const std::string& h : header) {
      const int c = column.at(h);
      const bool occ = std::find(occ_cols.begin(), occ_cols.end(), c) != occ_cols.end();
      if (c == d_col || occ || c == icol || c == x_col || h == "id") continue;
      cov_names.push_back(h);
    }
  }
  std::vector<int> cov_cols;
  for (const std::string& name : cov_names) {
    const int c = find(name);
    if (c < 0) throw DataError("csv: covariate column '" + name + "' not found");
    if (c == x_col) throw DataError("csv: '" + name + "' is the always-observed column; it enters z automatically");
    if (c == d_col || std::find(occ_cols.begin(), occ_cols.end(), c) != occ_cols.end())
      throw DataError("csv: '" + name + "' is a capture column, not a covariate");
    cov_cols.push_back(c);
  }

  CsvData out;
  out.names.push_back("intercept");
  if (x_col >= 0) out.names.push_back(*options.always_observed);
  for (const std::string& name : cov_names) out.names.push_back(name);
  const int p = static_cast<int>(out.names.size());

  std::vector<Record> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = "csv line " + std::to_string(line_no);
    const std::vector<std::string> cells = split_row(line);
    if (cells.size() != header.size())
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(cells.size()));
    Record r;
    if (d_col >= 0) {
      if (is_missing(cells[d_col])) throw DataError(where + ": capture count is missing");
      r.d = parse_integer(cells[d_col], where);
    } else {
      for (std::size_t k = 0; k < occ_cols.size(); ++k) {
        const std::string& s = cells[occ_cols[k]];
        if (is_missing(s)) throw DataError(where + ": occasion " + std::to_string(k + 1) + " is missing");
        const int v = parse_integer(s, where);
        if (v != 0 && v != 1) throw DataError(where + ": occasion entries must be 0 or 1");
        r.d += v;
      }
    }
    if (r.d == 0) throw DataError(where + ": individual never captured (d = 0)");
    if (r.d < 0 || r.d > K)
      throw DataError(where + ": capture count " + std::to_string(r.d) + " outside 1.." + std::to_string(K));

    Vector z(p);
    z[0] = 1.0;
    if (icol >= 0) {
      if (is_missing(cells[icol])) throw DataError(where + ": intercept is missing");
      if (parse_number(cells[icol], where) != 1.0) throw DataError(where + ": intercept column must equal 1");
    }
    int j = 1;
    if (x_col >= 0) {
      if (is_missing(cells[x_col]))
        throw DataError(where + ": always-observed covariate '" + *options.always_observed + "' is missing");
      const int x = parse_integer(cells[x_col], where);
      if (x != 0 && x != 1) throw DataError(where + ": always-observed covariate must be 0 or 1");
      r.x = x;
      z[j++] = x;
    }
    bool complete = true;
    for (int c : cov_cols) {
      if (is_missing(cells[c])) {
        complete = false;
        ++j;
        continue;
      }
      z[j++] = parse_number(cells[c], where);
    }
    if (complete) r.z = std::move(z);
    records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError("csv: no data rows");
  out.dataset = CaptureDataset(K, std::move(records));
  return out;
}

CsvData ingest_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return ingest_csv(in, options);
}

void write_csv(std::ostream& out, const CaptureDataset& dataset, const std::vector<std::string>& names,
               const std::optional<std::string>& always_observed) {
  const int p = dataset.covariate_dim();
  if (p > 0 && static_cast<int>(names.size()) != p)
    throw std::invalid_argument("write_csv: expected " + std::to_string(p) + " covariate names");
  const bool with_x = always_observed.has_value();
  const int first = with_x ? 2 : 1;
  out << "d";
  if (with_x) out << ',' << *always_observed;
  for (int j = first; j < static_cast<int>(names.size()); ++j) out << ',' << names[j];
  out << '\n';
  for (const Record& r : dataset.records()) {
    out << r.d;
    if (with_x) {
      if (!r.x) throw std::invalid_argument("write_csv: record without the always-observed covariate");
      out << ',' << *r.x;
    }
    for (int j = first; j < static_cast<int>(names.size()); ++j)
      out << ',' << (r.z ? format_number((*r.z)[j]) : std::string("NA"));
    out << '\n';
  }
}

json fit_to_json(const FitResult& fit, const std::vector<std::string>& names) {
  json j;
  j["n"] = fit.n;
  j["m"] = fit.m;
  j["nu_hat"] = fit.nu_hat;
  j["nu_hat_rounded"] = static_cast<long long>(std::llround(fit.nu_hat));
  j["beta_hat"] = vector_json(fit.beta_hat);
  if (!names.empty()) j["beta_names"] = names;
  j["alpha_hat"] = vector_json(fit.alpha_hat);
  j["loglik"] = fit.loglik_max;
  j["lambda_hat"] = vector_json(fit.lambda_hat);
  json active = json::array();
  for (std::size_t c = 0; c < fit.mask.size(); ++c)
    if (fit.mask[c]) active.push_back(c);
  j["diagnostics"] = {
      {"middle_converged", fit.middle_converged},
      {"outer_converged", fit.outer_converged},
      {"nu_capped", fit.nu_capped},
      {"nu_cap", fit.nu_cap},
      {"outer_evaluations", fit.outer_evaluations},
      {"middle_iterations", fit.middle_iterations},
      {"grad_norm", fit.grad_norm},
      {"dnu", fit.dnu},
      {"sum_weights", fit.weights.sum()},
      {"active_cells", active},
  };
  return j;
}

json interval_to_json(const IntervalResult& ci) {
  return {{"level", ci.level},
          {"lower", ci.lower},
          {"upper", ci.upper},
          {"lower_rounded", static_cast<long long>(std::llround(ci.lower))},
          {"upper_rounded", static_cast<long long>(std::llround(ci.upper))},
          {"upper_capped", ci.upper_capped},
          {"evaluations", ci.trace.size()}};
}

json lrt_to_json(const LrtResult& lrt, const std::string& coefficient) {
  return {{"coefficient", coefficient},
          {"statistic", lrt.statistic},
          {"p_value", lrt.p_value},
          {"df", 1},
          {"restricted_nu_hat", lrt.restricted.nu_hat},
          {"restricted_loglik", lrt.restricted.loglik_max},
          {"restricted_beta_hat", vector_json(lrt.restricted.beta_hat)}};
}

json report_to_json(const MetricsReport& rep) {
  const ScenarioConfig& c = rep.config;
  json j;
  j["schema"] = "elcr.simulation";
  j["schema_version"] = kSchemaVersion;
  j["config"] = {{"scenario", c.name},
                 {"occasions", c.occasions},
                 {"nu0", c.nu0},
                 {"binary", c.binary},
                 {"beta", vector_json(c.beta)},
                 {"replications", c.replications},
                 {"seed", c.seed},
                 {"levels", c.levels},
                 {"model", to_string(c.family())}};
  j["replications"] = rep.replications;
  j["failures"] = rep.failures;
  j["mean_n"] = rep.mean_n;
  j["mean_missing_rate"] = rep.mean_missing_rate;
  auto stats = [](const EstimatorStats& s) {
    return json{{"count", s.count}, {"mean", s.mean}, {"bias", s.bias}, {"rmse", s.rmse}};
  };
  j["proposed"] = stats(rep.proposed);
  j["complete_case"] = rep.complete_case ? stats(*rep.complete_case) : json(nullptr);
  auto coverage = [](const std::vector<CoverageStats>& v) {
    json a = json::array();
    for (const CoverageStats& s : v)
      a.push_back({{"level", s.level},
                   {"count", s.count},
                   {"two_sided", s.two_sided},
                   {"lower", s.lower},
                   {"upper", s.upper},
                   {"se_two_sided", s.se_two_sided},
                   {"se_lower", s.se_lower},
                   {"se_upper", s.se_upper},
                   {"mean_lower", s.mean_lower},
                   {"mean_upper", s.mean_upper},
                   {"capped", s.capped}});
    return a;
  };
  j["coverage"] = coverage(rep.coverage);
  j["wald_coverage"] = coverage(rep.wald_coverage);
  std::vector<double> finite;
  for (double r : rep.ratio_at_truth)
    if (std::isfinite(r)) finite.push_back(r);
  j["ratio_at_truth"] = {{"count", rep.ratio_at_truth.size()},
                         {"ks_distance", rep.ratio_at_truth.empty() ? json(nullptr)
                                                                     : json(ks_distance_chi2_1(rep.ratio_at_truth))}};
  j["lognu_variance"] = rep.lognu_variance ? json(*rep.lognu_variance) : json(nullptr);
  j["mean_cov_lognu"] = rep.mean_cov_lognu ? json(*rep.mean_cov_lognu) : json(nullptr);
  j["nu_hat"] = rep.nu_hat;
  return j;
}

std::vector<std::string> validate_result_json(const json& doc) {
  std::vector<std::string> err;
  auto need = [&](const json& obj, const std::string& key, auto pred, const std::string& what) {
    if (!obj.is_object() || !obj.contains(key)) {
      err.push_back("missing field '" + key + "'");
      return false;
    }
    if (!pred(obj.at(key))) {
      err.push_back("field '" + key + "' is not " + what);
      return false;
    }
    return true;
  };
  const auto is_num = [](const json& v) { return v.is_number(); };
  const auto is_int = [](const json& v) { return v.is_number_integer(); };
  const auto is_bool = [](const json& v) { return v.is_boolean(); };
  const auto is_obj = [](const json& v) { return v.is_object(); };
  const auto is_str = [](const json& v) { return v.is_string(); };
  const auto num_array = [](const json& v) {
    return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
  };

  if (!doc.is_object()) return {"document is not an object"};
  if (need(doc, "schema_version", is_int, "an integer") && doc["schema_version"] != kSchemaVersion)
    err.push_back("unsupported schema_version");
  if (!need(doc, "schema", is_str, "a string")) return err;
  const std::string schema = doc["schema"];

  if (schema == "elcr.fit" || schema == "elcr.test") {
    need(doc, "model", is_str, "a string");
    if (need(doc, "data", is_obj, "an object")) {
      need(doc["data"], "occasions", is_int, "an integer");
      need(doc["data"], "missing_rate", is_num, "a number");
    }
    if (!need(doc, "proposed", is_obj, "an object")) return err;
    const json& f = doc["proposed"];
    need(f, "n", is_int, "an integer");
    need(f, "m", is_int, "an integer");
    need(f, "nu_hat", is_num, "a number");
    need(f, "nu_hat_rounded", is_int, "an integer");
    need(f, "beta_hat", num_array, "a numeric array");
    need(f, "alpha_hat", num_array, "a numeric array");
    need(f, "loglik", is_num, "a number");
    need(f, "diagnostics", is_obj, "an object");
    if (f.contains("nu_hat") && f.contains("n") && f["nu_hat"].is_number() && f["n"].is_number() &&
        f["nu_hat"].get<double>() < f["n"].get<double>())
      err.push_back("nu_hat below n");
    if (need(f, "ci", [](const json& v) { return v.is_array() && !v.empty(); }, "a non-empty array")) {
      for (const json& ci : f["ci"]) {
        if (!need(ci, "level", is_num, "a number") || !need(ci, "lower", is_num, "a number") ||
            !need(ci, "upper", is_num, "a number"))
          continue;
        need(ci, "upper_capped", is_bool, "a boolean");
        const double level = ci["level"], lo = ci["lower"], up = ci["upper"];
        if (!(level > 0.0 && level < 1.0)) err.push_back("ci level outside (0,1)");
        if (lo > up) err.push_back("ci lower above upper");
        if (f.contains("n") && f["n"].is_number() && lo < f["n"].get<double>()) err.push_back("ci lower below n");
      }
    }
    if (schema == "elcr.test" && need(doc, "test", is_obj, "an object")) {
      const json& t = doc["test"];
      need(t, "coefficient", is_str, "a string");
      if (need(t, "statistic", is_num, "a number") && t["statistic"].get<double>() < 0.0)
        err.push_back("negative test statistic");
      if (need(t, "p_value", is_num, "a number")) {
        const double pv = t["p_value"];
        if (!(pv >= 0.0 && pv <= 1.0)) err.push_back("p_value outside [0,1]");
      }
    }
  } else if (schema == "elcr.simulation") {
    need(doc, "config", is_obj, "an object");
    need(doc, "replications", is_int, "an integer");
    need(doc, "failures", is_int, "an integer");
    if (need(doc, "proposed", is_obj, "an object")) {
      need(doc["proposed"], "bias", is_num, "a number");
      need(doc["proposed"], "rmse", is_num, "a number");
    }
    if (need(doc, "coverage", [](const json& v) { return v.is_array(); }, "an array"))
      for (const json& c : doc["coverage"])
        for (const char* key : {"level", "two_sided", "lower", "upper"}) need(c, key, is_num, "a number");
    need(doc, "ratio_at_truth", is_obj, "an object");
  } else {
    err.push_back("unknown schema '" + schema + "'");
  }
  return err;
}

void write_qq_csv(std::ostream& out, const std::vector<std::pair<double, double>>& points) {
  out << "empirical,chi2_1\n";
  for (const auto& [e, t] : points) out << format_number(e) << ',' << format_number(t) << '\n';
}

void RunConfig::validate() const {
  static const std::vector<std::string> commands{"fit", "test", "simulate", "qq", "generate"};
  if (std::find(commands.begin(), commands.end(), command) == commands.end())
    throw std::invalid_argument("unknown command '" + command + "'");
  for (double l : levels)
    if (!(l > 0.0 && l < 1.0)) throw std::invalid_argument("--level must be in (0,1)");
  if (command == "fit" || command == "test") {
    if (data.empty()) throw std::invalid_argument("--data is required for " + command);
    if (occasions < 0 || occasions > kMaxOccasions) throw std::invalid_argument("--k out of range");
    if (family == Family::Extended && !always_observed)
      throw std::invalid_argument("--model extended requires --always-observed");
  } else {
    if (std::string("ABCDF").find(scenario) == std::string::npos)
      throw std::invalid_argument("--scenario must be one of A, B, C, D, F");
    if (nu0 < 1) throw std::invalid_argument("--nu0 must be positive");
    if (reps < 1) throw std::invalid_argument("--reps must be positive");
  }
}

namespace {

struct FitBundle {
  FitResult fit;
  std::vector<IntervalResult> intervals;
};

FitBundle fit_with_intervals(const CaptureDataset& data, Family family, const std::vector<double>& levels) {
  ProfileLikelihood pl(data, family);
  FitBundle b;
  b.fit = pl.fit();
  for (double level : levels) b.intervals.push_back(pl.confidence_interval(level));
  return b;
}

double constraint_residual(const FitResult& fit, const CaptureDataset& data, Family tag) {
  const ModelFamily family = family_for(data, tag);
  Vector acc;
  int i = 0;
  for (const Record& r : data.records()) {
    if (!r.complete()) continue;
    const Vector u = constraint_vector(*r.z, tag == Family::Extended ? r.x : std::nullopt, fit.alpha_hat,
                                       fit.beta_hat, family, &fit.mask);
    if (acc.size() == 0) acc = Vector::Zero(u.size());
    acc += fit.weights[i++] * u;
  }
  return acc.size() ? acc.cwiseAbs().maxCoeff() : 0.0;
}

std::string format_beta(const Vector& beta) {
  std::ostringstream s;
  s << '(' << std::fixed << std::setprecision(4);
  for (Eigen::Index j = 0; j < beta.size(); ++j) s << (j ? ", " : "") << beta[j];
  s << ')';
  return s.str();
}

std::string format_interval(const IntervalResult& ci) {
  std::ostringstream s;
  s << '[' << std::llround(ci.lower) << ", " << (ci.upper_capped ? ">" : "") << std::llround(ci.upper) << ']';
  return s.str();
}

void write_json_file(const std::string& path, const json& doc, std::ostream& out) {
  if (path == "-") {
    out << doc.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << std::setprecision(17) << doc.dump(2) << '\n';
}

int run_fit(const RunConfig& cfg, std::ostream& out) {
  CsvOptions opt;
  opt.occasions = cfg.occasions;
  opt.covariates = cfg.covariates;
  opt.always_observed = cfg.always_observed;
  const CsvData csv = ingest_csv(cfg.data, opt);
  const CaptureDataset& data = csv.dataset;
  if (data.m() == 0) throw DataError("no record with observed covariates");
  const std::vector<double> levels = cfg.levels.empty() ? std::vector<double>{0.95} : cfg.levels;

  const FitBundle proposed = fit_with_intervals(data, cfg.family, levels);
  json doc;
  doc["schema"] = cfg.command == "test" ? "elcr.test" : "elcr.fit";
  doc["schema_version"] = kSchemaVersion;
  doc["model"] = to_string(cfg.family);
  doc["data"] = {{"path", cfg.data},
                 {"occasions", data.occasions()},
                 {"n", data.n()},
                 {"m", data.m()},
                 {"missing_rate", 1.0 - static_cast<double>(data.m()) / data.n()},
                 {"covariates", csv.names}};
  json fj = fit_to_json(proposed.fit, csv.names);
  fj["diagnostics"]["constraint_residual"] = constraint_residual(proposed.fit, data, cfg.family);
  const ModelFamily family = family_for(data, cfg.family);
  json labels = json::array();
  for (int c = 0; c < family.cell_count(); ++c) labels.push_back(cell_label(family, c));
  fj["alpha_cells"] = labels;
  fj["ci"] = json::array();
  for (const IntervalResult& ci : proposed.intervals) fj["ci"].push_back(interval_to_json(ci));
  if (cfg.wald) {
    const WBlocks wb = estimate_W(proposed.fit, data, cfg.family);
    fj["wald"] = json::array();
    for (double level : levels) {
      const WaldInterval wi = wald_interval_lognu(proposed.fit, wb, level);
      fj["wald"].push_back({{"level", level},
                            {"lower", wi.lower},
                            {"upper", wi.upper},
                            {"below_n", wi.below_n},
                            {"var_lognu", wb.covariance(0, 0)},
                            {"ill_conditioned", wb.ill_conditioned}});
    }
  }
  doc["proposed"] = fj;

  std::optional<FitBundle> cc;
  if (cfg.complete_case) {
    cc = fit_with_intervals(data.complete_cases(), cfg.family, levels);
    json cj = fit_to_json(cc->fit, csv.names);
    cj["ci"] = json::array();
    for (const IntervalResult& ci : cc->intervals) cj["ci"].push_back(interval_to_json(ci));
    doc["complete_case"] = cj;
  }

  std::optional<LrtResult> lrt;
  std::string coef_name;
  if (cfg.command == "test") {
    coef_name = cfg.coefficient ? *cfg.coefficient
                                : (cfg.always_observed ? *cfg.always_observed
                                                       : (csv.names.size() > 1 ? csv.names[1] : std::string()));
    const auto it = std::find(csv.names.begin(), csv.names.end(), coef_name);
    if (it == csv.names.end() || it == csv.names.begin())
      throw std::invalid_argument("cannot test coefficient '" + coef_name + "'");
    lrt = lrt_coefficient(data, cfg.family, static_cast<int>(it - csv.names.begin()));
    doc["test"] = lrt_to_json(*lrt, coef_name);
  }

  if (!cfg.out.empty()) write_json_file(cfg.out, doc, out);
  if (cfg.out == "-" || cfg.quiet) return kExitOk;

  const int pct = static_cast<int>(std::lround(100.0 * levels.front()));
  out << "Point estimates of nu and beta, and " << pct << "% confidence intervals of nu\n";
  out << "data: n = " << data.n() << ", complete = " << data.m() << ", K = " << data.occasions()
      << ", z = (" ;
  for (std::size_t j = 0; j < csv.names.size(); ++j) out << (j ? ", " : "") << csv.names[j];
  out << ")\n\n";
  out << std::left << std::setw(10) << "Model" << std::setw(10) << "Method" << std::setw(10) << "nu_hat"
      << std::setw(22) << "Interval" << "beta_hat\n";
  auto row = [&](const char* model, const char* method, const FitBundle& b) {
    out << std::left << std::setw(10) << model << std::setw(10) << method << std::setw(10)
        << std::llround(b.fit.nu_hat) << std::setw(22) << format_interval(b.intervals.front())
        << format_beta(b.fit.beta_hat) << '\n';
  };
  row(to_string(cfg.family), "Proposed", proposed);
  if (cc) row("", "CC", *cc);
  for (std::size_t l = 1; l < proposed.intervals.size(); ++l)
    out << "  " << std::lround(100.0 * levels[l]) << "% interval: " << format_interval(proposed.intervals[l]) << '\n';
  out << "  log-likelihood at the maximum: " << std::fixed << std::setprecision(4) << proposed.fit.loglik_max
      << '\n';
  if (lrt) {
    out << "\nEL ratio test of H0: beta_" << coef_name << " = 0 under the " << to_string(cfg.family)
        << " model\n"
        << "  statistic = " << std::setprecision(2) << lrt->statistic << ", p-value = " << std::setprecision(4)
        << lrt->p_value << " (chi-square, 1 df)\n";
  }
  out.unsetf(std::ios::fixed);
  return kExitOk;
}

ScenarioConfig scenario_from(const RunConfig& cfg) {
  ScenarioConfig sc = scenario(cfg.scenario, cfg.nu0);
  sc.replications = cfg.reps;
  sc.seed = cfg.seed;
  if (!cfg.levels.empty()) sc.levels = cfg.levels;
  sc.complete_case = cfg.complete_case;
  sc.asymptotics = cfg.wald;
  return sc;
}

int run_generate(const RunConfig& cfg, std::ostream& out) {
  const ScenarioConfig sc = scenario_from(cfg);
  const CaptureDataset data = generate(sc, replication_seed(cfg.seed, 0));
  std::vector<std::string> names{"intercept"};
  std::optional<std::string> x;
  if (sc.binary) {
    names.push_back("x");
    x = "x";
  }
  names.push_back("y");
  if (cfg.out.empty() || cfg.out == "-") {
    write_csv(out, data, names, x);
  } else {
    std::ofstream f(cfg.out);
    if (!f) throw std::runtime_error("cannot write '" + cfg.out + "'");
    write_csv(f, data, names, x);
  }
  return kExitOk;
}

void write_qq(const std::string& path, const std::vector<double>& sample, std::ostream& out) {
  const auto points = qq_export(sample);
  if (path == "-") {
    write_qq_csv(out, points);
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  write_qq_csv(f, points);
}

int run_simulate(const RunConfig& cfg, std::ostream& out) {
  ScenarioConfig sc = scenario_from(cfg);
  if (cfg.command == "qq") {
    sc.intervals = false;
    sc.complete_case = false;
    sc.asymptotics = false;
  }
  const MetricsReport rep = run_study(sc, cfg.threads);
  if (!cfg.out.empty()) write_json_file(cfg.out, report_to_json(rep), out);
  const std::string qq_path = !cfg.qq_out.empty() ? cfg.qq_out : (cfg.command == "qq" && cfg.out.empty() ? "-" : "");
  if (!qq_path.empty() && !rep.ratio_at_truth.empty()) write_qq(qq_path, rep.ratio_at_truth, out);
  if (cfg.quiet || cfg.out == "-" || qq_path == "-") return kExitOk;

  out << "Scenario " << sc.name << ", nu0 = " << sc.nu0 << ", K = " << sc.occasions << ", " << rep.replications
      << " replications (" << rep.failures << " failed)\n";
  out << std::fixed << std::setprecision(3) << "  mean n = " << rep.mean_n
      << ", mean missing rate = " << rep.mean_missing_rate << '\n';
  if (cfg.command == "simulate") {
    out << std::setprecision(2) << "  Proposed: bias = " << rep.proposed.bias << ", RMSE = " << rep.proposed.rmse
        << '\n';
    if (rep.complete_case)
      out << "  CC:       bias = " << rep.complete_case->bias << ", RMSE = " << rep.complete_case->rmse << '\n';
    for (const CoverageStats& c : rep.coverage)
      out << "  EL " << std::setprecision(0) << 100.0 * c.level << "%: two-sided " << std::setprecision(2)
          << 100.0 * c.two_sided << "%, lower " << 100.0 * c.lower << "%, upper " << 100.0 * c.upper << "%\n";
    for (const CoverageStats& c : rep.wald_coverage)
      out << "  Wald " << std::setprecision(0) << 100.0 * c.level << "%: two-sided " << std::setprecision(2)
          << 100.0 * c.two_sided << "%, lower " << 100.0 * c.lower << "%, upper " << 100.0 * c.upper << "%\n";
    if (rep.lognu_variance && rep.mean_cov_lognu)
      out << std::setprecision(4) << "  var sqrt(nu0) log(nu_hat/nu0) = " << *rep.lognu_variance
          << ", mean plug-in variance = " << *rep.mean_cov_lognu << '\n';
  }
  if (!rep.ratio_at_truth.empty())
    out << std::setprecision(4) << "  KS distance of R'(nu0) to chi-square(1) = "
        << ks_distance_chi2_1(rep.ratio_at_truth) << '\n';
  out.unsetf(std::ios::fixed);
  return kExitOk;
}

}  // namespace

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    config.validate();
  } catch (const std::exception& e) {
    err << "elcr: " << e.what() << '\n';
    return kExitUsage;
  }
  try {
    if (config.command == "fit" || config.command == "test") return run_fit(config, out);
    if (config.command == "generate") return run_generate(config, out);
    return run_simulate(config, out);
  } catch (const DataError& e) {
    err << "elcr: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const OptimizationError& e) {
    err << "elcr: optimization failure: " << e.what() << '\n';
    return kExitOptimization;
  } catch (const std::invalid_argument& e) {
    err << "elcr: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    // Numerical breakdown inside the solvers surfaces as domain/runtime errors.
    err << "elcr: optimization failure: " << e.what() << '\n';
    return kExitOptimization;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Empirical likelihood abundance estimation for capture-recapture data with missing covariates", "elcr"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string model = "base";
  std::string scenario_tag = "B";

  auto data_flags = [&](CLI::App* sub) {
    sub->add_option("--data", cfg.data, "CSV file with a 'd' column or occ1..occK columns")->required();
    sub->add_option("--model", model, "base or extended")
        ->check(CLI::IsMember({"base", "extended"}, CLI::ignore_case));
    sub->add_option("--k", cfg.occasions, "number of capture occasions")->check(CLI::Range(1, kMaxOccasions));
    sub->add_option("--level", cfg.levels, "confidence level (repeatable, default 0.95)");
    sub->add_option("--always-observed", cfg.always_observed, "binary column observed on every row");
    sub->add_option("--covariates", cfg.covariates, "covariate columns in model order")->delimiter(',');
    sub->add_option("--out", cfg.out, "JSON result file ('-' for standard output)");
    sub->add_flag("--complete-case", cfg.complete_case, "add the complete-case fit");
    sub->add_flag("--wald", cfg.wald, "add the log-scale Wald interval");
    sub->add_flag("--quiet", cfg.quiet, "suppress the table");
  };
  auto sim_flags = [&](CLI::App* sub) {
    sub->add_option("--scenario", scenario_tag, "A, B, C, D (benchmarks) or F (17-occasion field design)")
        ->check(CLI::IsMember({"A", "B", "C", "D", "F"}));
    sub->add_option("--nu0", cfg.nu0, "true abundance");
    sub->add_option("--seed", cfg.seed, "master seed");
    sub->add_option("--out", cfg.out, "output file ('-' for standard output)");
  };

  CLI::App* fit = app.add_subcommand("fit", "maximum EL estimate of abundance with EL-ratio intervals");
  data_flags(fit);
  CLI::App* test = app.add_subcommand("test", "fit plus the EL ratio test of one capture coefficient");
  data_flags(test);
  test->add_option("--coef", cfg.coefficient, "coefficient to test (default: the always-observed column)");
  CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo study under a benchmark scenario");
  sim_flags(sim);
  sim->add_option("--reps", cfg.reps, "replications");
  sim->add_option("--level", cfg.levels, "confidence level (repeatable)");
  sim->add_option("--qq-out", cfg.qq_out, "CSV of R'(nu0) quantiles against chi-square(1)");
  sim->add_flag("--complete-case", cfg.complete_case, "add the complete-case estimator");
  sim->add_flag("--wald", cfg.wald, "add plug-in variance and Wald intervals");
  sim->add_option("--threads", cfg.threads, "worker threads (default: ELCR_THREADS or all cores)");
  sim->add_flag("--quiet", cfg.quiet, "suppress the summary");
  CLI::App* qq = app.add_subcommand("qq", "simulate R'(nu0) and export its chi-square(1) QQ table");
  sim_flags(qq);
  qq->add_option("--reps", cfg.reps, "replications");
  qq->add_option("--qq-out", cfg.qq_out, "CSV output ('-' for standard output)");
  qq->add_option("--threads", cfg.threads, "worker threads");
  qq->add_flag("--quiet", cfg.quiet, "suppress the summary");
  CLI::App* gen = app.add_subcommand("generate", "write one simulated dataset as CSV");
  sim_flags(gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitOk : kExitUsage;
  }
  cfg.command = app.get_subcommands().front()->get_name();
  std::transform(model.begin(), model.end(), model.begin(), ::tolower);
  cfg.family = model == "extended" ? Family::Extended : Family::Base;
  cfg.scenario = scenario_tag.empty() ? 'B' : scenario_tag[0];
  return run(cfg, out, err);
}

}  // namespace elcr
