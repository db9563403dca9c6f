#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssinfer/rng.hpp"

namespace ssinfer {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

namespace detail {

inline void require_finite(const MatrixXd& m, const char* what) {
  if (!m.allFinite())
    throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

inline void require_finite(const VectorXd& v, const char* what) {
  if (!v.allFinite())
    throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

}  // namespace detail

// Prepends a column of exact ones: r x q in, r x (q+1) out.
inline MatrixXd augment(const MatrixXd& covariates) {
  detail::require_finite(covariates, "augment");
  MatrixXd out(covariates.rows(), covariates.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(covariates.cols()) = covariates;
  return out;
}

// Supervised sample: n rows of (response, covariate vector).
struct LabeledSet {
  VectorXd responses;   // n
  MatrixXd covariates;  // n x (p-1)

  LabeledSet() = default;
  LabeledSet(VectorXd y, MatrixXd x)
      : responses(std::move(y)), covariates(std::move(x)) {
    if (responses.size() != covariates.rows())
      throw std::invalid_argument("LabeledSet: responses/covariates row mismatch");
    if (responses.size() < 2)
      throw std::invalid_argument("LabeledSet: needs at least 2 rows");
    detail::require_finite(responses, "LabeledSet responses");
    detail::require_finite(covariates, "LabeledSet covariates");
  }

  Index n() const { return responses.size(); }
  Index dim() const { return covariates.cols(); }
};

// Auxiliary sample: covariates only.
struct UnlabeledSet {
  MatrixXd covariates;  // m x (p-1)

  UnlabeledSet() = default;
  explicit UnlabeledSet(MatrixXd x) : covariates(std::move(x)) {
    if (covariates.rows() < 2)
      throw std::invalid_argument("UnlabeledSet: needs at least 2 rows");
    detail::require_finite(covariates, "UnlabeledSet covariates");
  }

  Index m() const { return covariates.rows(); }
  Index dim() const { return covariates.cols(); }
};

inline void require_binary(const VectorXd& d, const char* what) {
  bool has0 = false, has1 = false;
  for (Index i = 0; i < d.size(); ++i) {
    if (d[i] == 0.0)
      has0 = true;
    else if (d[i] == 1.0)
      has1 = true;
    else
      throw std::invalid_argument(std::string(what) +
                                  ": treatment values must be 0 or 1");
  }
  if (!has0 || !has1)
    throw std::invalid_argument(std::string(what) +
                                ": both treatment arms must be present");
}

// Labeled rows carrying (response, binary treatment, covariates).
struct CausalLabeledSet {
  VectorXd responses;
  VectorXd treatments;  // entries in {0,1}, both arms present
  MatrixXd covariates;

  CausalLabeledSet() = default;
  CausalLabeledSet(VectorXd y, VectorXd d, MatrixXd x)
      : responses(std::move(y)), treatments(std::move(d)), covariates(std::move(x)) {
    if (responses.size() != covariates.rows() || treatments.size() != covariates.rows())
      throw std::invalid_argument("CausalLabeledSet: row mismatch");
    detail::require_finite(responses, "CausalLabeledSet responses");
    detail::require_finite(covariates, "CausalLabeledSet covariates");
    require_binary(treatments, "CausalLabeledSet");
  }

  Index n() const { return responses.size(); }
  Index dim() const { return covariates.cols(); }
};

// Unlabeled rows carrying (binary treatment, covariates).
struct CausalUnlabeledSet {
  VectorXd treatments;
  MatrixXd covariates;

  CausalUnlabeledSet() = default;
  CausalUnlabeledSet(VectorXd d, MatrixXd x)
      : treatments(std::move(d)), covariates(std::move(x)) {
    if (treatments.size() != covariates.rows())
      throw std::invalid_argument("CausalUnlabeledSet: row mismatch");
    detail::require_finite(covariates, "CausalUnlabeledSet covariates");
    require_binary(treatments, "CausalUnlabeledSet");
  }

  Index m() const { return treatments.size(); }
  Index dim() const { return covariates.cols(); }
};

// K-way fold assignment of n rows. Regenerating with the same
// (n, K, seed) triple yields the identical assignment on any platform.
class FoldPartition {
 public:
  FoldPartition(int k, std::vector<int> assignment, std::uint64_t seed)
      : k_(k), assignment_(std::move(assignment)), seed_(seed) {
    if (k_ < 1) throw std::invalid_argument("FoldPartition: K must be positive");
    std::vector<int> sizes(static_cast<std::size_t>(k_), 0);
    for (int a : assignment_) {
      if (a < 0 || a >= k_)
        throw std::invalid_argument("FoldPartition: fold index out of range");
      ++sizes[static_cast<std::size_t>(a)];
    }
    auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    if (*lo == 0) throw std::invalid_argument("FoldPartition: empty fold");
    if (*hi - *lo > 1)
      throw std::invalid_argument("FoldPartition: fold sizes differ by more than 1");
  }

  int k() const { return k_; }
  std::uint64_t seed() const { return seed_; }
  Index n() const { return static_cast<Index>(assignment_.size()); }
  const std::vector<int>& assignment() const { return assignment_; }
  int fold_of(Index i) const { return assignment_[static_cast<std::size_t>(i)]; }

  std::vector<Index> fold_rows(int fold) const {
    std::vector<Index> rows;
    for (Index i = 0; i < n(); ++i)
      if (assignment_[static_cast<std::size_t>(i)] == fold) rows.push_back(i);
    return rows;
  }

  std::vector<Index> complement_rows(int fold) const {
    std::vector<Index> rows;
    for (Index i = 0; i < n(); ++i)
      if (assignment_[static_cast<std::size_t>(i)] != fold) rows.push_back(i);
    return rows;
  }

 private:
  int k_;
  std::vector<int> assignment_;
  std::uint64_t seed_;
};

// Uniformly random balanced K-way split of n rows, deterministic in seed.
// Which folds receive an extra row and where rows land are both randomized,
// so the draw is uniform over all balanced assignments.
inline FoldPartition make_partition(Index n, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("make_partition: K must be positive");
  if (static_cast<Index>(k) > n)
    throw std::invalid_argument("make_partition: K exceeds n");

  Rng rng(derive_seed(seed, {0x706172746974ULL}));

  std::vector<int> fold_order(static_cast<std::size_t>(k));
  std::iota(fold_order.begin(), fold_order.end(), 0);
  for (std::size_t i = fold_order.size(); i > 1; --i)
    std::swap(fold_order[i - 1], fold_order[rng.below(i)]);

  const Index base = n / k;
  const Index rem = n % k;
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (std::size_t f = 0; f < fold_order.size(); ++f) {
    const Index size = base + (static_cast<Index>(f) < rem ? 1 : 0);
    labels.insert(labels.end(), static_cast<std::size_t>(size), fold_order[f]);
  }
  for (std::size_t i = labels.size(); i > 1; --i)
    std::swap(labels[i - 1], labels[rng.below(i)]);

  return FoldPartition(k, std::move(labels), seed);
}

// Propensity trimming interval, 0 < lo < hi < 1.
struct TrimBounds {
  double lo = 0.01;
  double hi = 0.99;

  void validate() const {
    if (!(lo > 0.0 && hi < 1.0 && lo < hi))
      throw std::invalid_argument("trim: need 0 < lo < hi < 1");
  }
};

// Gathers rows of a matrix / vector by index.
inline MatrixXd take_rows(const MatrixXd& m, const std::vector<Index>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

inline VectorXd take(const VectorXd& v, const std::vector<Index>& rows) {
  VectorXd out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    out[static_cast<Index>(i)] = v[rows[i]];
  return out;
}

}  // namespace ssinfer
