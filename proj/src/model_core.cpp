#include "elcr/model_core.hpp"

#include "elcr/error.hpp"

#include <array>
#include <cmath>
#include <string>

namespace elcr {

namespace {

struct BinomialTable {
  std::array<std::array<double, kMaxOccasions + 1>, kMaxOccasions + 1> log_coef{};
  BinomialTable() {
    for (int K = 0; K <= kMaxOccasions; ++K)
      for (int k = 0; k <= K; ++k)
        log_coef[K][k] = std::lgamma(K + 1.0) - std::lgamma(k + 1.0) - std::lgamma(K - k + 1.0);
  }
};

const BinomialTable& binomial_table() {
  static const BinomialTable table;
  return table;
}

}  // namespace

const char* to_string(Family family) { return family == Family::Base ? "base" : "extended"; }

CaptureDataset::CaptureDataset(int occasions, std::vector<Record> records)
    : occasions_(occasions), records_(std::move(records)) {
  if (occasions_ < 1 || occasions_ > kMaxOccasions)
    throw DataError("number of occasions must be in 1.." + std::to_string(kMaxOccasions));
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const Record& r = records_[i];
    const std::string where = "record " + std::to_string(i + 1);
    if (r.d < 1 || r.d > occasions_)
      throw DataError(where + ": capture count " + std::to_string(r.d) + " outside 1.." +
                      std::to_string(occasions_));
    if (r.x && *r.x != 0 && *r.x != 1) throw DataError(where + ": binary covariate must be 0 or 1");
    if (!r.z) continue;
    const Vector& z = *r.z;
    if (z.size() < 1 || z[0] != 1.0) throw DataError(where + ": covariate intercept must be 1");
    if (!z.allFinite()) throw DataError(where + ": non-finite covariate");
    if (complete_count_ == 0) {
      dim_ = static_cast<int>(z.size());
    } else if (z.size() != dim_) {
      throw DataError(where + ": covariate dimension mismatch");
    }
    ++complete_count_;
  }
}

bool CaptureDataset::has_binary() const {
  for (const Record& r : records_)
    if (!r.x) return false;
  return !records_.empty();
}

CaptureDataset CaptureDataset::complete_cases() const {
  std::vector<Record> kept;
  kept.reserve(complete_count_);
  for (const Record& r : records_)
    if (r.complete()) kept.push_back(r);
  return CaptureDataset(occasions_, std::move(kept));
}

ModelFamily::ModelFamily(Family tag, int occasions, int covariate_dim)
    : tag_(tag), occasions_(occasions), dim_(covariate_dim) {
  if (occasions < 1 || occasions > kMaxOccasions)
    throw DataError("number of occasions must be in 1.." + std::to_string(kMaxOccasions));
}

int ModelFamily::cell_index(int level, int captures) const {
  if (captures < 0 || captures > occasions_) throw std::out_of_range("capture count out of range");
  if (captures == 0) return 0;
  if (tag_ == Family::Base) return captures;
  if (level != 0 && level != 1) throw std::out_of_range("binary level must be 0 or 1");
  return 1 + level * occasions_ + (captures - 1);
}

int ModelFamily::captures_of(int cell) const {
  if (cell < 0 || cell >= cell_count()) throw std::out_of_range("cell index out of range");
  if (cell == 0 || tag_ == Family::Base) return cell;
  return (cell - 1) % occasions_ + 1;
}

int ModelFamily::level_of(int cell) const {
  if (cell < 0 || cell >= cell_count()) throw std::out_of_range("cell index out of range");
  if (cell == 0 || tag_ == Family::Base) return -1;
  return (cell - 1) / occasions_;
}

std::vector<int> CellCounts::active_cells() const {
  std::vector<int> cells;
  for (std::size_t c = 0; c < active.size(); ++c)
    if (active[c]) cells.push_back(static_cast<int>(c));
  return cells;
}

int CellCounts::total() const {
  int sum = 0;
  for (std::size_t c = 1; c < counts.size(); ++c) sum += counts[c];
  return sum;
}

double capture_prob(const VectorRef& z, const VectorRef& beta) {
  if (z.size() != beta.size()) throw std::invalid_argument("capture_prob: dimension mismatch");
  const double eta = z.dot(beta);
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double log_binomial_coefficient(int occasions, int k) {
  if (occasions < 0 || occasions > kMaxOccasions || k < 0 || k > occasions)
    throw std::out_of_range("binomial coefficient index out of range");
  return binomial_table().log_coef[occasions][k];
}

void capture_count_probs(double g, int occasions, std::vector<double>& out) {
  out.resize(occasions + 1);
  const double lg = std::log(g);
  const double l1g = std::log1p(-g);
  const auto& coef = binomial_table().log_coef[occasions];
  for (int k = 0; k <= occasions; ++k) {
    double s = coef[k];
    if (k > 0) s += k * lg;
    if (k < occasions) s += (occasions - k) * l1g;
    out[k] = std::exp(s);
  }
}

void cell_probs(double g, const ModelFamily& family, std::optional<int> x, std::vector<double>& out) {
  const int K = family.occasions();
  if (family.tag() == Family::Base) {
    capture_count_probs(g, K, out);
    return;
  }
  if (!x) throw std::invalid_argument("extended family requires the binary covariate");
  thread_local std::vector<double> counts;
  capture_count_probs(g, K, counts);
  out.assign(family.cell_count(), 0.0);
  out[0] = counts[0];
  for (int k = 1; k <= K; ++k) out[family.cell_index(*x, k)] = counts[k];
}

double cell_prob(const VectorRef& z, int cell, const ModelFamily& family, const VectorRef& beta,
                 std::optional<int> x) {
  if (cell < 0 || cell >= family.cell_count()) throw std::out_of_range("cell index out of range");
  const double g = capture_prob(z, beta);
  const int k = family.captures_of(cell);
  const int K = family.occasions();
  double s = log_binomial_coefficient(K, k);
  if (k > 0) s += k * std::log(g);
  if (k < K) s += (K - k) * std::log1p(-g);
  const double pk = std::exp(s);
  if (family.tag() == Family::Base || cell == 0) return pk;
  if (!x) throw std::invalid_argument("extended family requires the binary covariate");
  return family.level_of(cell) == *x ? pk : 0.0;
}

Vector constraint_vector(const VectorRef& z, std::optional<int> x, const VectorRef& alpha,
                         const VectorRef& beta, const ModelFamily& family,
                         const std::vector<bool>* mask) {
  const int cells = family.cell_count();
  if (alpha.size() != cells) throw std::invalid_argument("constraint_vector: alpha dimension mismatch");
  if (family.tag() == Family::Extended && !x)
    throw std::invalid_argument("extended family requires the binary covariate");
  if (mask && static_cast<int>(mask->size()) != cells)
    throw std::invalid_argument("constraint_vector: mask dimension mismatch");
  std::vector<double> probs;
  cell_probs(capture_prob(z, beta), family, x, probs);
  Vector u(cells);
  int q = 0;
  for (int c = 0; c < cells; ++c) {
    if (mask && !(*mask)[c]) continue;
    u[q++] = probs[c] - alpha[c];
  }
  return u.head(q);
}

CellCounts summarize(const CaptureDataset& dataset, const ModelFamily& family) {
  CellCounts cc;
  cc.counts.assign(family.cell_count(), 0);
  for (const Record& r : dataset.records()) {
    if (r.complete()) continue;
    if (family.tag() == Family::Extended && !r.x)
      throw DataError("extended family: incomplete record without binary covariate");
    ++cc.counts[family.cell_index(r.x.value_or(0), r.d)];
  }
  cc.active.assign(family.cell_count(), true);
  for (int c = 1; c < family.cell_count(); ++c) cc.active[c] = cc.counts[c] > 0;
  return cc;
}

ModelFamily family_for(const CaptureDataset& dataset, Family tag) {
  if (tag == Family::Extended && !dataset.has_binary())
    throw DataError("extended family requires the always-observed binary covariate on every record");
  return ModelFamily(tag, dataset.occasions(), dataset.covariate_dim());
}

}  // namespace elcr
