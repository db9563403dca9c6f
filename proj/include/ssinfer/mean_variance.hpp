#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssinfer/data.hpp"
#include "ssinfer/nuisance.hpp"
#include "ssinfer/stats.hpp"

namespace ssinfer {

// First and second augmented moments of the unlabeled sample:
// mu_hat = m^-1 sum X~_i, c_hat = m^-1 sum (X~_i - mu_hat)(X~_i - mu_hat)^T.
// On the standard augmented path mu_hat[0] == 1 and c_hat's first row and
// column vanish; the stacked-covariate path reuses the same shape without
// those properties.
struct MomentCache {
  VectorXd mu_hat;
  MatrixXd c_hat;
  Index m = 0;

  double quad_form(const VectorXd& beta) const {
    return beta.dot(c_hat.selfadjointView<Eigen::Lower>() * beta);
  }
};

// Moments of pre-augmented (or stacked) rows.
inline MomentCache moment_cache_rows(const MatrixXd& rows) {
  if (rows.rows() < 1)
    throw std::invalid_argument("moment_cache: empty unlabeled set");
  MomentCache cache;
  cache.m = rows.rows();
  cache.mu_hat = rows.colwise().mean();
  MatrixXd centered = rows.rowwise() - cache.mu_hat.transpose();
  cache.c_hat = MatrixXd::Zero(rows.cols(), rows.cols());
  cache.c_hat.selfadjointView<Eigen::Lower>().rankUpdate(
      centered.transpose(), 1.0 / static_cast<double>(cache.m));
  cache.c_hat.triangularView<Eigen::StrictlyUpper>() =
      cache.c_hat.transpose().triangularView<Eigen::StrictlyUpper>();
  return cache;
}

inline MomentCache moment_cache(const UnlabeledSet& unlabeled) {
  return moment_cache_rows(augment(unlabeled.covariates));
}

// Per-fold slope fits on fold complements, tied to their partition.
struct CrossFit {
  FoldPartition partition;
  std::vector<SlopeFit> fits;  // fits[k] trained without fold k

  const VectorXd& slope(int k) const { return fits[static_cast<std::size_t>(k)].coefficients; }
};

inline CrossFit cross_fit(const LabeledSet& labeled, const FoldPartition& partition,
                          const LearnerSpec& learner) {
  if (partition.n() != labeled.n())
    throw std::invalid_argument("cross_fit: partition size mismatch");
  CrossFit cf{partition, {}};
  cf.fits.reserve(static_cast<std::size_t>(partition.k()));
  for (int k = 0; k < partition.k(); ++k) {
    const auto rows = partition.complement_rows(k);
    if (rows.empty())
      throw std::invalid_argument("cross_fit: fold " + std::to_string(k) +
                                  " has an empty complement");
    try {
      cf.fits.push_back(fit_slope(take_rows(labeled.covariates, rows),
                                  take(labeled.responses, rows), learner));
    } catch (const std::exception& e) {
      throw std::runtime_error("cross_fit: fold " + std::to_string(k) + ": " +
                               e.what());
    }
  }
  return cf;
}

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
};

struct MeanInference {
  double theta_hat = 0.0;
  VectorXd per_fold;          // theta_hat^(k)
  double sigma_eps_sq = 0.0;  // K-average of squared cross-fitted residuals
  double b_sq = 0.0;          // may be negative in finite samples
  double var_hat = 0.0;       // sigma_eps_sq + (n/m) max(b_sq, 0)
  ConfidenceInterval ci;
  Index n = 0, m = 0;
  int k = 0;
  double alpha = 0.0;
};

struct VarianceInference {
  double sigma_y_sq_hat = 0.0;
  double sigma_xi_sq = 0.0;
  double sigma_nu_sq = 0.0;
  double var_hat = 0.0;  // sigma_nu_sq + (n/m) sigma_xi_sq
  ConfidenceInterval ci;
  Index n = 0, m = 0;
  int k = 0;
  double alpha = 0.0;
};

namespace detail {

inline void check_pipeline_dims(const MatrixXd& xt, const MomentCache& cache,
                                const FoldPartition& partition) {
  if (xt.cols() != cache.mu_hat.size())
    throw std::invalid_argument(
        "estimate: labeled/unlabeled column counts do not match");
  if (partition.n() != xt.rows())
    throw std::invalid_argument("estimate: partition size mismatch");
}

// Cross-fitted mean on an augmented design: per fold,
// theta^(k) = mu^T b_k + |I_k|^-1 sum_{i in I_k} (y_i - x~_i^T b_k),
// aggregated by averaging over folds.
struct MeanCore {
  double theta = 0.0;
  VectorXd per_fold;
  double sigma_eps_sq = 0.0;
  double b_sq = 0.0;
};

inline MeanCore mean_core(const MatrixXd& xt, const VectorXd& y,
                          const MomentCache& cache, const FoldPartition& partition,
                          const std::vector<VectorXd>& slopes) {
  const int K = partition.k();
  MeanCore out;
  out.per_fold.resize(K);

  std::vector<std::vector<Index>> folds(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) folds[static_cast<std::size_t>(k)] = partition.fold_rows(k);

  for (int k = 0; k < K; ++k) {
    const auto& rows = folds[static_cast<std::size_t>(k)];
    const VectorXd& beta = slopes[static_cast<std::size_t>(k)];
    const double mu_dot = cache.mu_hat.dot(beta);
    double acc = 0.0;
    for (Index i : rows) acc += y[i] - xt.row(i).dot(beta);
    out.per_fold[k] = mu_dot + acc / static_cast<double>(rows.size());
  }
  out.theta = out.per_fold.mean();

  double sig_sum = 0.0, b_sum = 0.0;
  for (int k = 0; k < K; ++k) {
    const auto& rows = folds[static_cast<std::size_t>(k)];
    const VectorXd& beta = slopes[static_cast<std::size_t>(k)];
    const double mu_dot = cache.mu_hat.dot(beta);
    const double quad = cache.quad_form(beta);
    double sig_k = 0.0, cross_k = 0.0;
    for (Index i : rows) {
      const double proj = xt.row(i).dot(beta) - mu_dot;  // b^T (x~_i - mu)
      const double eps = y[i] - out.theta - proj;
      sig_k += eps * eps;
      cross_k += proj * eps;
    }
    const double nk = static_cast<double>(rows.size());
    sig_sum += sig_k / nk;
    b_sum += quad + 2.0 * cross_k / nk;
  }
  out.sigma_eps_sq = sig_sum / K;
  out.b_sq = b_sum / K;
  return out;
}

// Per-observation terms of the variance estimator, indexed by original row.
struct VarianceCore {
  double sigma_y_sq = 0.0;
  VectorXd xi;  // b^T (V_i V_i^T - C) b
  VectorXd nu;  // eps^2 + 2 b^T V_i eps + b^T C b - sigma_y_sq
  double sigma_xi_sq = 0.0;
  double sigma_nu_sq = 0.0;
};

inline VarianceCore variance_core(const MatrixXd& xt, const VectorXd& y,
                                  const MomentCache& cache,
                                  const FoldPartition& partition,
                                  const std::vector<VectorXd>& slopes,
                                  double theta) {
  const int K = partition.k();
  const Index n = xt.rows();
  VarianceCore out;
  out.xi.resize(n);
  out.nu.resize(n);

  VectorXd proj(n), resid(n), quad_of_row(n);
  double sig_sum = 0.0;
  for (int k = 0; k < K; ++k) {
    const auto rows = partition.fold_rows(k);
    const VectorXd& beta = slopes[static_cast<std::size_t>(k)];
    const double mu_dot = cache.mu_hat.dot(beta);
    const double quad = cache.quad_form(beta);
    double u_sq = 0.0, d_sq = 0.0;
    for (Index i : rows) {
      const double u = y[i] - theta;
      const double d = xt.row(i).dot(beta) - mu_dot;
      proj[i] = d;
      resid[i] = u - d;
      quad_of_row[i] = quad;
      u_sq += u * u;
      d_sq += d * d;
    }
    const double nk = static_cast<double>(rows.size());
    sig_sum += u_sq / nk + quad - d_sq / nk;
  }
  out.sigma_y_sq = sig_sum / K;

  double xi_sq = 0.0, nu_sq = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double d = proj[i];
    const double eps = resid[i];
    out.xi[i] = d * d - quad_of_row[i];
    const double eta = eps * eps + 2.0 * d * eps + quad_of_row[i];
    out.nu[i] = eta - out.sigma_y_sq;
    xi_sq += out.xi[i] * out.xi[i];
    nu_sq += out.nu[i] * out.nu[i];
  }
  out.sigma_xi_sq = xi_sq / static_cast<double>(n);
  out.sigma_nu_sq = nu_sq / static_cast<double>(n);
  return out;
}

inline std::vector<VectorXd> slopes_of(const CrossFit& cf) {
  std::vector<VectorXd> slopes;
  slopes.reserve(cf.fits.size());
  for (const auto& f : cf.fits) slopes.push_back(f.coefficients);
  return slopes;
}

inline MeanInference finish_mean(const MeanCore& core, Index n, Index m, int K,
                                 double alpha) {
  MeanInference inf;
  inf.theta_hat = core.theta;
  inf.per_fold = core.per_fold;
  inf.sigma_eps_sq = core.sigma_eps_sq;
  inf.b_sq = core.b_sq;
  const double tau = static_cast<double>(n) / static_cast<double>(m);
  inf.var_hat = core.sigma_eps_sq + tau * std::max(core.b_sq, 0.0);
  const double half = z_two_sided(alpha) *
                      std::sqrt(inf.var_hat / static_cast<double>(n));
  inf.ci = {core.theta - half, core.theta + half};
  inf.n = n;
  inf.m = m;
  inf.k = K;
  inf.alpha = alpha;
  return inf;
}

}  // namespace detail

// Semi-supervised mean with cross-fitted bias correction. The slope
// estimates come from `crossfit` (one fit per fold complement).
inline MeanInference estimate_mean(const LabeledSet& labeled,
                                   const MomentCache& cache,
                                   const CrossFit& crossfit, double alpha) {
  const MatrixXd xt = augment(labeled.covariates);
  detail::check_pipeline_dims(xt, cache, crossfit.partition);
  const auto core = detail::mean_core(xt, labeled.responses, cache,
                                      crossfit.partition,
                                      detail::slopes_of(crossfit));
  return detail::finish_mean(core, labeled.n(), cache.m,
                             crossfit.partition.k(), alpha);
}

inline MeanInference estimate_mean(const LabeledSet& labeled,
                                   const MomentCache& cache,
                                   const FoldPartition& partition,
                                   const LearnerSpec& learner, double alpha) {
  return estimate_mean(labeled, cache, cross_fit(labeled, partition, learner),
                       alpha);
}

// Semi-supervised response variance; requires the mean inference obtained
// from the same partition and slope fits.
inline VarianceInference estimate_variance(const LabeledSet& labeled,
                                           const MomentCache& cache,
                                           const CrossFit& crossfit,
                                           const MeanInference& mean_inference,
                                           double alpha) {
  const MatrixXd xt = augment(labeled.covariates);
  detail::check_pipeline_dims(xt, cache, crossfit.partition);
  const auto core = detail::variance_core(
      xt, labeled.responses, cache, crossfit.partition,
      detail::slopes_of(crossfit), mean_inference.theta_hat);

  VarianceInference inf;
  inf.sigma_y_sq_hat = core.sigma_y_sq;
  inf.sigma_xi_sq = core.sigma_xi_sq;
  inf.sigma_nu_sq = core.sigma_nu_sq;
  const Index n = labeled.n();
  const double tau = static_cast<double>(n) / static_cast<double>(cache.m);
  inf.var_hat = core.sigma_nu_sq + tau * core.sigma_xi_sq;
  const double half =
      z_two_sided(alpha) * std::sqrt(inf.var_hat / static_cast<double>(n));
  inf.ci = {core.sigma_y_sq - half, core.sigma_y_sq + half};
  inf.n = n;
  inf.m = cache.m;
  inf.k = crossfit.partition.k();
  inf.alpha = alpha;
  return inf;
}

inline VarianceInference estimate_variance(const LabeledSet& labeled,
                                           const MomentCache& cache,
                                           const FoldPartition& partition,
                                           const LearnerSpec& learner,
                                           const MeanInference& mean_inference,
                                           double alpha) {
  return estimate_variance(labeled, cache,
                           cross_fit(labeled, partition, learner),
                           mean_inference, alpha);
}

// Averaging over T independent partitions, with the between-partition
// spread added to the averaged variance as a finite-sample correction.
struct MultiPartitionInference {
  double theta_bar = 0.0;
  double var_bar = 0.0;
  VectorXd per_partition_theta;
  VectorXd per_partition_var;
  ConfidenceInterval ci;
  Index n = 0, m = 0;
  int k = 0, t = 0;
  double alpha = 0.0;
};

inline MultiPartitionInference estimate_mean_multi(
    const LabeledSet& labeled, const MomentCache& cache,
    const std::vector<FoldPartition>& partitions, const LearnerSpec& learner,
    double alpha) {
  if (partitions.empty())
    throw std::invalid_argument("estimate_mean_multi: T must be positive");
  const int T = static_cast<int>(partitions.size());

  MultiPartitionInference inf;
  inf.per_partition_theta.resize(T);
  inf.per_partition_var.resize(T);
  for (int t = 0; t < T; ++t) {
    const auto mean_t =
        estimate_mean(labeled, cache, partitions[static_cast<std::size_t>(t)],
                      learner, alpha);
    inf.per_partition_theta[t] = mean_t.theta_hat;
    inf.per_partition_var[t] = mean_t.var_hat;
  }
  inf.theta_bar = inf.per_partition_theta.mean();
  const double between =
      (inf.per_partition_theta.array() - inf.theta_bar).square().mean();
  inf.var_bar = inf.per_partition_var.mean() + between;

  const Index n = labeled.n();
  const double half =
      z_two_sided(alpha) * std::sqrt(inf.var_bar / static_cast<double>(n));
  inf.ci = {inf.theta_bar - half, inf.theta_bar + half};
  inf.n = n;
  inf.m = cache.m;
  inf.k = partitions.front().k();
  inf.t = T;
  inf.alpha = alpha;
  return inf;
}

inline MultiPartitionInference estimate_mean_multi(
    const LabeledSet& labeled, const MomentCache& cache, int t_partitions,
    int k, const LearnerSpec& learner, double alpha, std::uint64_t seed) {
  if (t_partitions < 1)
    throw std::invalid_argument("estimate_mean_multi: T must be positive");
  std::vector<FoldPartition> partitions;
  partitions.reserve(static_cast<std::size_t>(t_partitions));
  for (int t = 0; t < t_partitions; ++t)
    partitions.push_back(make_partition(
        labeled.n(), k, derive_seed(seed, {static_cast<std::uint64_t>(t)})));
  return estimate_mean_multi(labeled, cache, partitions, learner, alpha);
}

// ---------------------------------------------------------------------------
// Supervised baselines.

struct Inference {
  double estimate = 0.0;
  double var_hat = 0.0;
  ConfidenceInterval ci;
  Index n = 0;
  double alpha = 0.0;
};

// Sample mean with the normal interval based on S_Y (divisor n).
inline Inference sample_mean_ci(const VectorXd& y, double alpha) {
  const Index n = y.size();
  if (n < 2) throw std::invalid_argument("sample_mean_ci: need n >= 2");
  Inference inf;
  inf.estimate = y.mean();
  const double s_sq = (y.array() - inf.estimate).square().mean();
  inf.var_hat = s_sq;
  const double half =
      z_two_sided(alpha) * std::sqrt(s_sq / static_cast<double>(n));
  inf.ci = {inf.estimate - half, inf.estimate + half};
  inf.n = n;
  inf.alpha = alpha;
  return inf;
}

inline Inference sample_mean_ci(const LabeledSet& labeled, double alpha) {
  return sample_mean_ci(labeled.responses, alpha);
}

// Plug-in kurtosis used by the sample-variance interval.
inline double sample_kurtosis(const VectorXd& y) {
  const Index n = y.size();
  if (n < 4)
    throw std::invalid_argument("sample_kurtosis: need n >= 4");
  const double y_bar = y.mean();
  const double s_sq = (y.array() - y_bar).square().mean();
  if (!(s_sq > 0.0))
    throw std::invalid_argument("sample_kurtosis: zero sample variance");
  const double nd = static_cast<double>(n);
  const double fourth = (y.array() - y_bar).pow(4).sum() / (s_sq * s_sq);
  return nd * (nd + 1.0) / ((nd - 1.0) * (nd - 2.0) * (nd - 3.0)) * fourth -
         3.0 * (nd - 1.0) * (nd - 1.0) / ((nd - 2.0) * (nd - 3.0)) + 3.0;
}

// Sample variance (divisor n) with the kurtosis-adjusted asymmetric
// interval [S^2/(1 + z c), S^2/(1 - z c)], c = sqrt(gamma - 1)/sqrt(n).
// An upper factor <= 0 yields an infinite upper endpoint; gamma below 1
// (possible in small samples) collapses the width to zero.
inline Inference sample_variance_ci(const VectorXd& y, double alpha) {
  const Index n = y.size();
  if (n < 4) throw std::invalid_argument("sample_variance_ci: need n >= 4");
  Inference inf;
  const double y_bar = y.mean();
  const double s_sq = (y.array() - y_bar).square().mean();
  const double gamma = sample_kurtosis(y);
  const double c =
      std::sqrt(std::max(gamma - 1.0, 0.0) / static_cast<double>(n));
  const double z = z_two_sided(alpha);
  inf.estimate = s_sq;
  inf.var_hat = s_sq * s_sq * std::max(gamma - 1.0, 0.0);
  inf.ci.lo = s_sq / (1.0 + z * c);
  inf.ci.hi = (1.0 - z * c > 0.0)
                  ? s_sq / (1.0 - z * c)
                  : std::numeric_limits<double>::infinity();
  inf.n = n;
  inf.alpha = alpha;
  return inf;
}

inline Inference sample_variance_ci(const LabeledSet& labeled, double alpha) {
  return sample_variance_ci(labeled.responses, alpha);
}

}  // namespace ssinfer
