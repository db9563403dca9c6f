#pragma once

#include <Eigen/Dense>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "ssinfer/causal.hpp"
#include "ssinfer/data.hpp"
#include "ssinfer/mean_variance.hpp"
#include "ssinfer/nuisance.hpp"
#include "ssinfer/rng.hpp"
#include "ssinfer/stats.hpp"

namespace ssinfer {

enum class SimVariant { m51, m52, m53, m54, ex1, ex2, causal_synth };

inline const char* to_string(SimVariant v) {
  switch (v) {
    case SimVariant::m51: return "m51";
    case SimVariant::m52: return "m52";
    case SimVariant::m53: return "m53";
    case SimVariant::m54: return "m54";
    case SimVariant::ex1: return "ex1";
    case SimVariant::ex2: return "ex2";
    case SimVariant::causal_synth: return "causal_synth";
  }
  return "?";
}

inline SimVariant sim_variant_from_string(const std::string& s) {
  if (s == "m51") return SimVariant::m51;
  if (s == "m52") return SimVariant::m52;
  if (s == "m53") return SimVariant::m53;
  if (s == "m54") return SimVariant::m54;
  if (s == "ex1") return SimVariant::ex1;
  if (s == "ex2") return SimVariant::ex2;
  if (s == "causal_synth") return SimVariant::causal_synth;
  throw std::invalid_argument("unknown simulation model: " + s);
}

// Simulation design; p counts the intercept, so covariates have p-1
// coordinates. `a` sets the deviation size for ex1/ex2.
struct SimModel {
  SimVariant variant = SimVariant::m51;
  Index n = 100;
  Index m = 1000;
  Index p = 500;
  Index s0 = 1;
  double a = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 2 || m < 2 || p < 2 || s0 < 1)
      throw std::invalid_argument("SimModel: n, m >= 2 and p >= 2, s0 >= 1");
    if (s0 > p - 1)
      throw std::invalid_argument("SimModel: s0 must be at most p - 1");
    if (variant == SimVariant::causal_synth && p - 1 < 3)
      throw std::invalid_argument("SimModel: causal_synth needs p - 1 >= 3");
  }
};

struct TruthValues {
  double theta = 0.0;
  double sigma_y_sq = 0.0;
  double delta = std::numeric_limits<double>::quiet_NaN();
  double d = std::numeric_limits<double>::quiet_NaN();
  bool analytic = true;       // else oracle-sourced
  Index oracle_draws = 0;     // sample size behind oracle-sourced values
};

// ---------------------------------------------------------------------------
// The dense covariance design: C1 = H D1 H, where D1 is the affine grid
// from 0.1 to 2 over p-1 points and H is the (symmetric, orthogonal)
// Householder reflector sending e1 to the normalized all-ones vector, an
// exact eigenbasis of the equicorrelation matrix. The spectrum of C1 is
// exactly the D1 grid and C1^(1/2) = H sqrt(D1) H.

inline VectorXd c1_diagonal(Index q) {
  if (q < 2) throw std::invalid_argument("build_c1: need at least 2 covariates");
  VectorXd d(q);
  for (Index i = 0; i < q; ++i)
    d[i] = 0.1 + 1.9 * static_cast<double>(i) / static_cast<double>(q - 1);
  return d;
}

namespace detail {

inline MatrixXd householder_congruence(const VectorXd& diag) {
  const Index q = diag.size();
  VectorXd v = -VectorXd::Ones(q) / std::sqrt(static_cast<double>(q));
  v[0] += 1.0;  // v = e1 - u1
  const double vtv = v.squaredNorm();
  if (vtv <= 0.0) return MatrixXd(diag.asDiagonal());  // q == 1, H = I
  const double c = 2.0 / vtv;
  const VectorXd w = diag.asDiagonal() * v;
  const double vtw = v.dot(w);
  MatrixXd out = MatrixXd(diag.asDiagonal());
  out.noalias() -= c * (v * w.transpose() + w * v.transpose());
  out.noalias() += (c * c * vtw) * (v * v.transpose());
  return out;
}

}  // namespace detail

inline MatrixXd build_c1(Index q) {
  return detail::householder_congruence(c1_diagonal(q));
}

inline MatrixXd build_c1_sqrt(Index q) {
  return detail::householder_congruence(c1_diagonal(q).cwiseSqrt());
}

// ---------------------------------------------------------------------------
// Truths. Closed forms where the moments are available (m51 by the
// variance normalization; m52-m54 through cumulants of Poisson and
// centered-exponential linear forms); Monte Carlo oracle otherwise,
// memoized per design.

namespace detail {

// Model 5.1 signal scale: Var(X^T beta0) = 1 with beta0 = b * 1_{s0}.
inline double m51_beta0(const MatrixXd& c1, Index s0) {
  const double block = c1.topLeftCorner(s0, s0).sum();
  return 1.0 / std::sqrt(block);
}

// Var(a S^2 + b S) for S ~ Pois(lambda).
inline double poisson_quadratic_var(double lambda, double a, double b) {
  const double var_s2 =
      lambda + 6.0 * lambda * lambda + 4.0 * lambda * lambda * lambda;
  const double cov_s2_s = lambda + 2.0 * lambda * lambda;
  return a * a * var_s2 + 2.0 * a * b * cov_s2_s + b * b * lambda;
}

// Var(0.1 L^2 + g L) where L = sum_j v_j Z_j with iid mean-zero Z of unit
// second/third/fourth cumulants (Pois(1)-1 and Exp(1)-1 both qualify for
// the orders used here).
struct LinearFormCumulants {
  double k2 = 0.0, k3 = 0.0, k4 = 0.0;
};

inline LinearFormCumulants cumulants_of(const VectorXd& v) {
  LinearFormCumulants c;
  c.k2 = v.array().square().sum();
  c.k3 = v.array().cube().sum();
  c.k4 = v.array().pow(4).sum();
  return c;
}

inline double quadratic_form_var(const LinearFormCumulants& c, double quad,
                                 double lin) {
  const double var_l2 = c.k4 + 2.0 * c.k2 * c.k2;
  return quad * quad * var_l2 + lin * lin * c.k2 + 2.0 * quad * lin * c.k3;
}

struct OracleKey {
  int variant;
  Index p, s0;
  std::uint64_t a_bits;
  Index draws;
  bool operator<(const OracleKey& o) const {
    return std::tie(variant, p, s0, a_bits, draws) <
           std::tie(o.variant, o.p, o.s0, o.a_bits, o.draws);
  }
};

inline double causal_synth_logit(double x1, double x2, double x3) {
  return x1 - x2 + 0.5 * x3;
}

inline double causal_synth_propensity(double x1, double x2, double x3) {
  const double e = 1.0 / (1.0 + std::exp(-causal_synth_logit(x1, x2, x3)));
  return std::clamp(e, 0.1, 0.9);
}

inline constexpr double kCausalBeta1[4] = {2.0, 1.0, 0.5, 0.25};
inline constexpr double kCausalBeta0[4] = {1.0, 0.5, 0.25, 0.125};

// Population mean and variance of Y (and of the causal response) by
// simulation; only the coordinates that enter the response are drawn.
inline TruthValues oracle_truth(const SimModel& model, Index draws) {
  Rng rng(derive_seed(0x6f7261636c65ULL,
                      {static_cast<std::uint64_t>(model.variant),
                       static_cast<std::uint64_t>(model.p),
                       static_cast<std::uint64_t>(model.s0),
                       std::bit_cast<std::uint64_t>(model.a)}));
  const Index q = model.p - 1;
  double sum = 0.0, sum_sq = 0.0;
  switch (model.variant) {
    case SimVariant::ex1: {
      for (Index t = 0; t < draws; ++t) {
        double s = 0.0, qsum = 0.0;
        for (Index j = 0; j < q; ++j) {
          const double x = draw_normal(rng);
          s += x;
          qsum += x * x;
        }
        const double y = s + (model.a * qsum + s) * draw_normal(rng);
        sum += y;
        sum_sq += y * y;
      }
      break;
    }
    case SimVariant::ex2: {
      const double sd = std::sqrt(static_cast<double>(q));
      for (Index t = 0; t < draws; ++t) {
        const double s = sd * draw_normal(rng);
        const double y = model.a * std::abs(std::log(0.8 * std::abs(s) + 0.01)) +
                         s + draw_normal(rng);
        sum += y;
        sum_sq += y * y;
      }
      break;
    }
    case SimVariant::causal_synth: {
      for (Index t = 0; t < draws; ++t) {
        const double x1 = draw_normal(rng);
        const double x2 = draw_normal(rng);
        const double x3 = draw_normal(rng);
        const double e = causal_synth_propensity(x1, x2, x3);
        const bool treated = rng.uniform() < e;
        const double* b = treated ? kCausalBeta1 : kCausalBeta0;
        const double y =
            b[0] + b[1] * x1 + b[2] * x2 + b[3] * x3 + draw_normal(rng);
        sum += y;
        sum_sq += y * y;
      }
      break;
    }
    default:
      throw std::logic_error("oracle_truth: analytic variant");
  }
  const double mean = sum / static_cast<double>(draws);
  TruthValues truth;
  truth.theta = mean;
  truth.sigma_y_sq = sum_sq / static_cast<double>(draws) - mean * mean;
  truth.analytic = false;
  truth.oracle_draws = draws;
  if (model.variant == SimVariant::causal_synth) {
    truth.delta = kCausalBeta1[0] - kCausalBeta0[0];  // covariates are centered
    truth.d = truth.delta / std::sqrt(truth.sigma_y_sq);
  }
  return truth;
}

}  // namespace detail

inline constexpr Index kDefaultOracleDraws = 10'000'000;

inline TruthValues compute_truth(const SimModel& model,
                                 Index oracle_draws = kDefaultOracleDraws) {
  model.validate();
  const Index q = model.p - 1;
  TruthValues truth;
  switch (model.variant) {
    case SimVariant::m51: {
      const MatrixXd c1 = build_c1(q);
      const double beta0 = detail::m51_beta0(c1, model.s0);
      truth.theta = beta0 * static_cast<double>(model.s0);
      truth.sigma_y_sq = 2.0;  // unit signal by normalization, unit noise
      return truth;
    }
    case SimVariant::m52: {
      const double s0 = static_cast<double>(model.s0);
      truth.theta = 0.1 * (1.0 + s0) + std::sqrt(s0);
      truth.sigma_y_sq =
          detail::poisson_quadratic_var(s0, 0.1 / s0, 1.0 / std::sqrt(s0)) + 1.0;
      return truth;
    }
    case SimVariant::m53: {
      VectorXd beta = VectorXd::Zero(q);
      beta.head(model.s0).setConstant(1.0 / std::sqrt(static_cast<double>(model.s0)));
      const VectorXd v = build_c1_sqrt(q) * beta;
      truth.theta = std::sqrt(static_cast<double>(model.s0));
      truth.sigma_y_sq = v.squaredNorm() + 1.0;
      return truth;
    }
    case SimVariant::m54: {
      VectorXd beta = VectorXd::Zero(q);
      beta.head(model.s0).setConstant(1.0 / std::sqrt(static_cast<double>(model.s0)));
      const VectorXd v = build_c1_sqrt(q) * beta;
      const auto cum = detail::cumulants_of(v);
      const double c = std::sqrt(static_cast<double>(model.s0));
      truth.theta = 0.1 * (cum.k2 + c * c) + c;
      truth.sigma_y_sq =
          detail::quadratic_form_var(cum, 0.1, 0.2 * c + 1.0) + 1.0;
      return truth;
    }
    case SimVariant::ex1: {
      const double qd = static_cast<double>(q);
      truth.theta = 0.0;
      truth.sigma_y_sq = 2.0 * qd + model.a * model.a * (2.0 * qd + qd * qd);
      return truth;
    }
    case SimVariant::ex2:
    case SimVariant::causal_synth: {
      static std::map<detail::OracleKey, TruthValues> memo;
      static std::mutex memo_mutex;
      const detail::OracleKey key{static_cast<int>(model.variant), model.p,
                                  model.s0, std::bit_cast<std::uint64_t>(model.a),
                                  oracle_draws};
      std::lock_guard<std::mutex> lock(memo_mutex);
      auto it = memo.find(key);
      if (it == memo.end())
        it = memo.emplace(key, detail::oracle_truth(model, oracle_draws)).first;
      return it->second;
    }
  }
  throw std::logic_error("compute_truth: unreachable");
}

// ---------------------------------------------------------------------------
// Data generation, deterministic in (model.seed, rep_index).

struct Dataset {
  LabeledSet labeled;
  UnlabeledSet unlabeled;
  TruthValues truth;
};

struct CausalDataset {
  CausalLabeledSet labeled;
  CausalUnlabeledSet unlabeled;
  TruthValues truth;
};

namespace detail {

inline MatrixXd draw_matrix(Rng& rng, Index rows, Index cols,
                            double (*draw)(Rng&)) {
  MatrixXd out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = draw(rng);
  return out;
}

}  // namespace detail

inline Dataset generate(const SimModel& model, int rep_index) {
  model.validate();
  if (model.variant == SimVariant::causal_synth)
    throw std::invalid_argument("generate: causal_synth uses generate_causal");

  Rng rng(derive_seed(model.seed,
                      {static_cast<std::uint64_t>(rep_index), 0x646174ULL}));
  const Index q = model.p - 1;
  const Index total = model.n + model.m;
  const double rs0 = std::sqrt(static_cast<double>(model.s0));

  MatrixXd x;
  VectorXd y(model.n);
  switch (model.variant) {
    case SimVariant::m51: {
      const MatrixXd csqrt = build_c1_sqrt(q);
      const double beta0 = detail::m51_beta0(build_c1(q), model.s0);
      MatrixXd z = detail::draw_matrix(
          rng, total, q, [](Rng& r) { return draw_normal(r); });
      x = z * csqrt;
      x.array() += 1.0;
      for (Index i = 0; i < model.n; ++i) {
        const double signal = beta0 * x.row(i).head(model.s0).sum();
        y[i] = signal + draw_normal(rng);
      }
      break;
    }
    case SimVariant::m52: {
      x = detail::draw_matrix(rng, total, q, [](Rng& r) {
        return static_cast<double>(r.poisson1());
      });
      for (Index i = 0; i < model.n; ++i) {
        const double w = x.row(i).head(model.s0).sum() / rs0;
        y[i] = 0.1 * w * w + w + draw_normal(rng);
      }
      break;
    }
    case SimVariant::m53:
    case SimVariant::m54: {
      const MatrixXd csqrt = build_c1_sqrt(q);
      MatrixXd z =
          model.variant == SimVariant::m53
              ? detail::draw_matrix(rng, total, q,
                                    [](Rng& r) { return r.exponential() - 1.0; })
              : detail::draw_matrix(rng, total, q, [](Rng& r) {
                  return static_cast<double>(r.poisson1()) - 1.0;
                });
      x = z * csqrt;
      x.array() += 1.0;
      for (Index i = 0; i < model.n; ++i) {
        const double w = x.row(i).head(model.s0).sum() / rs0;
        y[i] = (model.variant == SimVariant::m54 ? 0.1 * w * w : 0.0) + w +
               draw_normal(rng);
      }
      break;
    }
    case SimVariant::ex1: {
      x = detail::draw_matrix(rng, total, q,
                              [](Rng& r) { return draw_normal(r); });
      for (Index i = 0; i < model.n; ++i) {
        const double s = x.row(i).sum();
        const double qsum = x.row(i).squaredNorm();
        y[i] = s + (model.a * qsum + s) * draw_normal(rng);
      }
      break;
    }
    case SimVariant::ex2: {
      x = detail::draw_matrix(rng, total, q,
                              [](Rng& r) { return draw_normal(r); });
      for (Index i = 0; i < model.n; ++i) {
        const double s = x.row(i).sum();
        y[i] = model.a * std::abs(std::log(0.8 * std::abs(s) + 0.01)) + s +
               draw_normal(rng);
      }
      break;
    }
    default:
      throw std::logic_error("generate: unreachable");
  }

  return Dataset{LabeledSet(std::move(y), x.topRows(model.n)),
                 UnlabeledSet(x.bottomRows(model.m)), compute_truth(model)};
}

inline CausalDataset generate_causal(const SimModel& model, int rep_index) {
  model.validate();
  if (model.variant != SimVariant::causal_synth)
    throw std::invalid_argument("generate_causal: model is not causal_synth");

  Rng rng(derive_seed(model.seed,
                      {static_cast<std::uint64_t>(rep_index), 0x646174ULL}));
  const Index q = model.p - 1;
  const Index total = model.n + model.m;

  MatrixXd x = detail::draw_matrix(rng, total, q,
                                   [](Rng& r) { return draw_normal(r); });
  VectorXd d(total);
  VectorXd y(model.n);
  for (Index i = 0; i < total; ++i) {
    const double e = detail::causal_synth_propensity(x(i, 0), x(i, 1), x(i, 2));
    d[i] = rng.uniform() < e ? 1.0 : 0.0;
    if (i < model.n) {
      const double* b =
          d[i] == 1.0 ? detail::kCausalBeta1 : detail::kCausalBeta0;
      y[i] = b[0] + b[1] * x(i, 0) + b[2] * x(i, 1) + b[3] * x(i, 2) +
             draw_normal(rng);
    }
  }

  return CausalDataset{
      CausalLabeledSet(std::move(y), d.head(model.n), x.topRows(model.n)),
      CausalUnlabeledSet(d.tail(model.m), x.bottomRows(model.m)),
      compute_truth(model)};
}

// ---------------------------------------------------------------------------
// Monte Carlo replication runner.

enum class Bundle { mean_variance, causal };

struct McOptions {
  int k = 2;
  double alpha = 0.05;
  LearnerSpec learner;
  LearnerSpec propensity_learner;
  TrimBounds trim;
  int threads = 0;  // 0 = SSINFER_THREADS env, then hardware
};

struct EstimatorStats {
  std::string name;
  double mse = 0.0;
  double avg_length = 0.0;
  double avg_coverage = 0.0;
  double mean_estimate = 0.0;
  double var_estimate = 0.0;  // across reps, divisor reps-1
  bool has_ci = true;
};

struct McReport {
  std::vector<EstimatorStats> estimators;
  int reps = 0;
  int failed = 0;
  TruthValues truth;
  SimModel model;
  McOptions options;
  // Per-rep estimates (reps x estimators, NaN on failed reps); kept in
  // memory for calibration checks, not serialized.
  MatrixXd per_rep;

  const EstimatorStats& by_name(const std::string& name) const {
    for (const auto& e : estimators)
      if (e.name == name) return e;
    throw std::invalid_argument("McReport: no estimator named " + name);
  }
};

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SSINFER_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

namespace detail {

struct RepRecord {
  bool ok = false;
  std::string error;
  // per estimator: estimate, ci lo, ci hi (NaN bounds when no interval)
  std::vector<std::array<double, 3>> values;
};

inline std::vector<std::string> bundle_names(Bundle bundle) {
  if (bundle == Bundle::causal) return {"delta_hat", "d_hat", "delta_sample"};
  return {"theta_hat", "y_bar", "sigma_y_sq_hat", "s_y_sq"};
}

inline double truth_for(const std::string& name, const TruthValues& truth) {
  if (name == "theta_hat" || name == "y_bar") return truth.theta;
  if (name == "sigma_y_sq_hat" || name == "s_y_sq") return truth.sigma_y_sq;
  if (name == "delta_hat" || name == "delta_sample") return truth.delta;
  if (name == "d_hat") return truth.d;
  throw std::logic_error("truth_for: " + name);
}

inline RepRecord run_rep(const SimModel& model, Bundle bundle,
                         const McOptions& opt, int rep) {
  RepRecord rec;
  const std::uint64_t part_seed =
      derive_seed(model.seed, {static_cast<std::uint64_t>(rep), 0x706172ULL});
  if (bundle == Bundle::causal) {
    const CausalDataset data = generate_causal(model, rep);
    const auto partition = make_partition(model.n, opt.k, part_seed);
    const auto propensity =
        logistic_lasso_propensity(opt.propensity_learner, opt.trim);
    const auto nuis = detail::fit_ate_nuisances(data.labeled, partition,
                                                opt.learner, propensity);
    const auto ate =
        estimate_ate(data.labeled, data.unlabeled, partition, nuis, opt.alpha);
    const auto tes = estimate_tes(data.labeled, data.unlabeled, partition,
                                  opt.learner, nuis, opt.alpha);
    const double delta_s = sample_ate_baseline(data.labeled);
    rec.values = {{ate.delta_hat, ate.ci.lo, ate.ci.hi},
                  {tes.d_hat, tes.ci.lo, tes.ci.hi},
                  {delta_s, std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<double>::quiet_NaN()}};
  } else {
    const Dataset data = generate(model, rep);
    const auto partition = make_partition(model.n, opt.k, part_seed);
    const auto cache = moment_cache(data.unlabeled);
    const auto cf = cross_fit(data.labeled, partition, opt.learner);
    const auto mean = estimate_mean(data.labeled, cache, cf, opt.alpha);
    const auto var =
        estimate_variance(data.labeled, cache, cf, mean, opt.alpha);
    const auto ybar = sample_mean_ci(data.labeled, opt.alpha);
    const auto svar = sample_variance_ci(data.labeled, opt.alpha);
    rec.values = {{mean.theta_hat, mean.ci.lo, mean.ci.hi},
                  {ybar.estimate, ybar.ci.lo, ybar.ci.hi},
                  {var.sigma_y_sq_hat, var.ci.lo, var.ci.hi},
                  {svar.estimate, svar.ci.lo, svar.ci.hi}};
  }
  rec.ok = true;
  return rec;
}

}  // namespace detail

// Runs `reps` independent replications; per-rep seeds derive from
// (model.seed, rep) so serial and parallel runs agree bit for bit.
inline McReport run_mc(const SimModel& model, Bundle bundle, int reps,
                       const McOptions& opt) {
  model.validate();
  if (reps < 1) throw std::invalid_argument("run_mc: reps must be positive");
  if (bundle == Bundle::causal && model.variant != SimVariant::causal_synth)
    throw std::invalid_argument("run_mc: causal bundle needs causal_synth");
  if (bundle == Bundle::mean_variance &&
      model.variant == SimVariant::causal_synth)
    throw std::invalid_argument("run_mc: causal_synth needs the causal bundle");

  const auto names = detail::bundle_names(bundle);
  std::vector<detail::RepRecord> records(static_cast<std::size_t>(reps));

  const int threads = std::min(resolve_threads(opt.threads), reps);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int rep = next.fetch_add(1);
      if (rep >= reps) break;
      auto& rec = records[static_cast<std::size_t>(rep)];
      try {
        rec = detail::run_rep(model, bundle, opt, rep);
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  McReport report;
  report.reps = reps;
  report.truth = compute_truth(model);
  report.model = model;
  report.options = opt;
  report.per_rep.setConstant(reps, static_cast<Index>(names.size()),
                             std::numeric_limits<double>::quiet_NaN());

  std::string first_error;
  for (const auto& rec : records) {
    if (!rec.ok) {
      ++report.failed;
      if (first_error.empty()) first_error = rec.error;
    }
  }
  if (report.failed * 20 > reps)
    throw std::runtime_error("run_mc: " + std::to_string(report.failed) + "/" +
                             std::to_string(reps) +
                             " replications failed; first error: " + first_error);

  const int ok = reps - report.failed;
  for (std::size_t e = 0; e < names.size(); ++e) {
    EstimatorStats st;
    st.name = names[e];
    const double truth = detail::truth_for(st.name, report.truth);
    double se_sum = 0.0, len_sum = 0.0, est_sum = 0.0, est_sq = 0.0;
    int cover = 0;
    bool has_ci = false;
    for (int rep = 0; rep < reps; ++rep) {
      const auto& rec = records[static_cast<std::size_t>(rep)];
      if (!rec.ok) continue;
      const auto& v = rec.values[e];
      report.per_rep(rep, static_cast<Index>(e)) = v[0];
      const double err = v[0] - truth;
      se_sum += err * err;
      est_sum += v[0];
      est_sq += v[0] * v[0];
      if (std::isfinite(v[1]) || std::isfinite(v[2])) {
        has_ci = true;
        len_sum += v[2] - v[1];
        if (v[1] <= truth && truth <= v[2]) ++cover;
      }
    }
    st.has_ci = has_ci;
    st.mse = se_sum / ok;
    st.mean_estimate = est_sum / ok;
    st.var_estimate =
        ok > 1 ? (est_sq - est_sum * est_sum / ok) / (ok - 1) : 0.0;
    st.avg_length = has_ci ? len_sum / ok
                           : std::numeric_limits<double>::quiet_NaN();
    st.avg_coverage = has_ci ? static_cast<double>(cover) / ok
                             : std::numeric_limits<double>::quiet_NaN();
    report.estimators.push_back(std::move(st));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Efficiency ratio r: the proportional reduction in the asymptotic
// variance of the semi-supervised variance estimator relative to the
// sample variance, estimated by plug-in Monte Carlo.

struct ProportionalityResult {
  double r = 0.0;
  double se = 0.0;
  Index draws = 0;
};

inline ProportionalityResult proportionality_r(const SimModel& model,
                                               Index oracle_draws,
                                               std::uint64_t seed,
                                               bool force_zero_slope = false) {
  if (model.variant != SimVariant::ex1 && model.variant != SimVariant::ex2)
    throw std::invalid_argument("proportionality_r: model must be ex1 or ex2");
  if (oracle_draws < 100'000)
    throw std::invalid_argument("proportionality_r: need at least 1e5 draws");
  const Index q = model.p - 1;

  const auto draw_xy = [&](Rng& rng, VectorXd& x) -> double {
    double s = 0.0, qsum = 0.0;
    for (Index j = 0; j < q; ++j) {
      x[j] = draw_normal(rng);
      s += x[j];
      qsum += x[j] * x[j];
    }
    if (model.variant == SimVariant::ex1)
      return s + (model.a * qsum + s) * draw_normal(rng);
    return model.a * std::abs(std::log(0.8 * std::abs(s) + 0.01)) + s +
           draw_normal(rng);
  };

  // Stage 1: population slope by streaming least squares on fresh draws.
  VectorXd beta = VectorXd::Zero(q + 1);
  double theta = 0.0;
  VectorXd mu = VectorXd::Zero(q + 1);
  {
    Rng rng(derive_seed(seed, {0x736c6f7065ULL}));
    MatrixXd gram = MatrixXd::Zero(q + 1, q + 1);
    VectorXd moment = VectorXd::Zero(q + 1);
    VectorXd xt(q + 1);
    xt[0] = 1.0;
    VectorXd x(q);
    double y_sum = 0.0;
    for (Index t = 0; t < oracle_draws; ++t) {
      const double y = draw_xy(rng, x);
      xt.tail(q) = x;
      gram.selfadjointView<Eigen::Lower>().rankUpdate(xt, 1.0);
      moment += xt * y;
      mu += xt;
      y_sum += y;
    }
    gram.triangularView<Eigen::StrictlyUpper>() =
        gram.transpose().triangularView<Eigen::StrictlyUpper>();
    beta = gram.ldlt().solve(moment);
    mu /= static_cast<double>(oracle_draws);
    theta = y_sum / static_cast<double>(oracle_draws);
    if (force_zero_slope) {
      beta.setZero();
      beta[0] = theta;
    }
  }

  // Stage 2: batch-mean plug-in estimates of both variances.
  constexpr int kBatches = 20;
  const Index per_batch = oracle_draws / kBatches;
  Rng rng(derive_seed(seed, {0x706c7567696eULL}));
  std::vector<double> r_batch;
  VectorXd x(q);
  for (int b = 0; b < kBatches; ++b) {
    double u_sum = 0.0, u_sq = 0.0, v_sum = 0.0, v_sq = 0.0;
    for (Index t = 0; t < per_batch; ++t) {
      const double y = draw_xy(rng, x);
      const double proj = beta[0] + x.dot(beta.tail(q)) -
                          (beta[0] * mu[0] + mu.tail(q).dot(beta.tail(q)));
      const double eps = y - beta[0] - x.dot(beta.tail(q));
      const double u = (y - theta) * (y - theta);
      const double v = eps * eps + 2.0 * proj * eps;
      u_sum += u;
      u_sq += u * u;
      v_sum += v;
      v_sq += v * v;
    }
    const double nb = static_cast<double>(per_batch);
    const double var_u = u_sq / nb - (u_sum / nb) * (u_sum / nb);
    const double var_v = v_sq / nb - (v_sum / nb) * (v_sum / nb);
    if (!(var_u > 1e-12))
      throw std::runtime_error("proportionality_r: Var(Y - theta)^2 is degenerate");
    r_batch.push_back((var_u - var_v) / var_u);
  }

  ProportionalityResult res;
  res.draws = per_batch * kBatches;
  for (double rb : r_batch) res.r += rb;
  res.r /= kBatches;
  double ss = 0.0;
  for (double rb : r_batch) ss += (rb - res.r) * (rb - res.r);
  res.se = std::sqrt(ss / (kBatches - 1) / kBatches);
  return res;
}

}  // namespace ssinfer
