#pragma once

// Logistic capture model, multinomial capture-count cells and the
// estimating functions that tie the cell probabilities to the covariate law.

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace elcr {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

inline constexpr int kMaxOccasions = 64;

enum class Family { Base, Extended };

const char* to_string(Family family);

/// One ever-captured individual.
struct Record {
  int d = 0;                    // number of captures, 1..K
  std::optional<Vector> z;      // covariates incl. leading intercept; absent when missing
  std::optional<int> x;         // always-observed binary covariate (Extended family)

  bool complete() const { return z.has_value(); }
};

class CaptureDataset {
 public:
  CaptureDataset() = default;
  /// Validates every record; throws DataError on violation.
  CaptureDataset(int occasions, std::vector<Record> records);

  int occasions() const { return occasions_; }
  const std::vector<Record>& records() const { return records_; }
  int n() const { return static_cast<int>(records_.size()); }
  int m() const { return complete_count_; }
  /// Covariate dimension p (0 when there are no complete records).
  int covariate_dim() const { return dim_; }
  /// True when every record carries the always-observed binary covariate.
  bool has_binary() const;

  CaptureDataset complete_cases() const;

 private:
  int occasions_ = 0;
  std::vector<Record> records_;
  int complete_count_ = 0;
  int dim_ = 0;
};

/// Cell layout of a model family.  Cell 0 is "never captured"; Base cells
/// 1..K are capture counts; Extended cells 1..2K are (j,k) pairs laid out as
/// 1 + j*K + (k-1).
class ModelFamily {
 public:
  ModelFamily(Family tag, int occasions, int covariate_dim);

  Family tag() const { return tag_; }
  int occasions() const { return occasions_; }
  int covariate_dim() const { return dim_; }
  int cell_count() const { return tag_ == Family::Base ? occasions_ + 1 : 2 * occasions_ + 1; }

  int cell_index(int level, int captures) const;
  int captures_of(int cell) const;
  /// Level j of the binary covariate for an Extended cell; -1 for cell 0 and Base cells.
  int level_of(int cell) const;

 private:
  Family tag_;
  int occasions_;
  int dim_;
};

/// Incomplete-record tabulation m_k (Base) or m_jk (Extended).  counts[0]
/// is unused (m_0 = nu - n depends on nu).  active[c] is false for a
/// capture cell with zero count; cell 0 is always active.
struct CellCounts {
  std::vector<int> counts;
  std::vector<bool> active;

  std::vector<int> active_cells() const;
  int total() const;
};

/// exp(b'z)/(1+exp(b'z)) without overflow.
double capture_prob(const VectorRef& z, const VectorRef& beta);

/// log C(K,k) for 0 <= k <= K <= kMaxOccasions.
double log_binomial_coefficient(int occasions, int k);

/// Binomial(K, g) mass at every k, computed in log space.
void capture_count_probs(double g, int occasions, std::vector<double>& out);

/// Probability of cell `cell` for covariate z.  Extended cells need the
/// binary level x.
double cell_prob(const VectorRef& z, int cell, const ModelFamily& family, const VectorRef& beta,
                 std::optional<int> x = std::nullopt);

/// All cell probabilities of the family for one individual with capture
/// probability g (and binary level x for Extended).
void cell_probs(double g, const ModelFamily& family, std::optional<int> x, std::vector<double>& out);

/// U(z; alpha, beta).  With a mask only active components are returned, in
/// cell order.
Vector constraint_vector(const VectorRef& z, std::optional<int> x, const VectorRef& alpha,
                         const VectorRef& beta, const ModelFamily& family,
                         const std::vector<bool>* mask = nullptr);

CellCounts summarize(const CaptureDataset& dataset, const ModelFamily& family);

/// Family deduced from the dataset: Extended needs a binary covariate on every record.
ModelFamily family_for(const CaptureDataset& dataset, Family tag);

}  // namespace elcr
