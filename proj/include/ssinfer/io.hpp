#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ssinfer/causal.hpp"
#include "ssinfer/data.hpp"
#include "ssinfer/mean_variance.hpp"
#include "ssinfer/nuisance.hpp"
#include "ssinfer/sim.hpp"

namespace ssinfer {

using nlohmann::json;

// ---------------------------------------------------------------------------
// CSV datasets. Formats:
//   labeled            y,x1,...,x{p-1}
//   unlabeled          x1,...,x{p-1}
//   causal labeled     y,d,x1,...
//   causal unlabeled   d,x1,...
// Values are decimal literals; d is 0 or 1. Errors carry 1-based line and
// column coordinates (line 1 is the header).

namespace detail {

struct CsvTable {
  std::vector<std::string> header;
  MatrixXd values;  // data rows x columns
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string::size_type start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

inline bool parses_as_number(const std::string& cell) {
  double v;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto res = std::from_chars(begin, end, v);
  return res.ec == std::errc() && res.ptr == end;
}

inline CsvTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw std::runtime_error(path + ": empty file");

  CsvTable table;
  table.header = split_line(lines[0]);
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (table.header[c].empty() || parses_as_number(table.header[c]))
      throw std::runtime_error(path + ": line 1, column " + std::to_string(c + 1) +
                               ": missing or numeric header cell");
  }

  const std::size_t cols = table.header.size();
  table.values.resize(static_cast<Index>(lines.size() - 1),
                      static_cast<Index>(cols));
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split_line(lines[r]);
    if (cells.size() != cols)
      throw std::runtime_error(path + ": line " + std::to_string(r + 1) +
                               ": expected " + std::to_string(cols) +
                               " cells, found " + std::to_string(cells.size()));
    for (std::size_t c = 0; c < cols; ++c) {
      double v;
      const char* begin = cells[c].data();
      const char* end = begin + cells[c].size();
      auto res = std::from_chars(begin, end, v);
      if (res.ec != std::errc() || res.ptr != end)
        throw std::runtime_error(path + ": line " + std::to_string(r + 1) +
                                 ", column " + std::to_string(c + 1) +
                                 ": not a number: '" + cells[c] + "'");
      table.values(static_cast<Index>(r - 1), static_cast<Index>(c)) = v;
    }
  }
  return table;
}

inline void expect_header(const CsvTable& table, std::size_t column,
                          const std::string& name, const std::string& path) {
  if (table.header.size() <= column || table.header[column] != name)
    throw std::runtime_error(path + ": line 1: expected column " +
                             std::to_string(column + 1) + " to be '" + name +
                             "'");
}

inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_csv(const std::string& path,
                      const std::vector<std::string>& header,
                      const MatrixXd& values) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::size_t c = 0; c < header.size(); ++c)
    out << (c ? "," : "") << header[c];
  out << "\n";
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c)
      out << (c ? "," : "") << format_value(values(r, c));
    out << "\n";
  }
}

}  // namespace detail

inline LabeledSet load_labeled_csv(const std::string& path) {
  const auto table = detail::load_csv(path);
  detail::expect_header(table, 0, "y", path);
  if (table.values.rows() < 2)
    throw std::runtime_error(path + ": labeled set needs at least 2 data rows");
  return LabeledSet(table.values.col(0),
                    table.values.rightCols(table.values.cols() - 1));
}

inline UnlabeledSet load_unlabeled_csv(const std::string& path) {
  const auto table = detail::load_csv(path);
  detail::expect_header(table, 0, "x1", path);
  return UnlabeledSet(table.values);
}

inline CausalLabeledSet load_causal_labeled_csv(const std::string& path) {
  const auto table = detail::load_csv(path);
  detail::expect_header(table, 0, "y", path);
  detail::expect_header(table, 1, "d", path);
  return CausalLabeledSet(table.values.col(0), table.values.col(1),
                          table.values.rightCols(table.values.cols() - 2));
}

inline CausalUnlabeledSet load_causal_unlabeled_csv(const std::string& path) {
  const auto table = detail::load_csv(path);
  detail::expect_header(table, 0, "d", path);
  return CausalUnlabeledSet(table.values.col(0),
                            table.values.rightCols(table.values.cols() - 1));
}

namespace detail {

inline std::vector<std::string> covariate_names(Index count) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(count));
  for (Index j = 0; j < count; ++j)
    names.push_back("x" + std::to_string(j + 1));
  return names;
}

}  // namespace detail

inline void save_labeled_csv(const std::string& path, const LabeledSet& set) {
  std::vector<std::string> header{"y"};
  for (auto& name : detail::covariate_names(set.dim())) header.push_back(name);
  MatrixXd values(set.n(), set.dim() + 1);
  values.col(0) = set.responses;
  values.rightCols(set.dim()) = set.covariates;
  detail::write_csv(path, header, values);
}

inline void save_unlabeled_csv(const std::string& path, const UnlabeledSet& set) {
  detail::write_csv(path, detail::covariate_names(set.dim()), set.covariates);
}

inline void save_causal_labeled_csv(const std::string& path,
                                    const CausalLabeledSet& set) {
  std::vector<std::string> header{"y", "d"};
  for (auto& name : detail::covariate_names(set.dim())) header.push_back(name);
  MatrixXd values(set.n(), set.dim() + 2);
  values.col(0) = set.responses;
  values.col(1) = set.treatments;
  values.rightCols(set.dim()) = set.covariates;
  detail::write_csv(path, header, values);
}

inline void save_causal_unlabeled_csv(const std::string& path,
                                      const CausalUnlabeledSet& set) {
  std::vector<std::string> header{"d"};
  for (auto& name : detail::covariate_names(set.dim())) header.push_back(name);
  MatrixXd values(set.m(), set.dim() + 1);
  values.col(0) = set.treatments;
  values.rightCols(set.dim()) = set.covariates;
  detail::write_csv(path, header, values);
}

// ---------------------------------------------------------------------------
// Run configuration. Strict parsing: unknown keys are rejected so typos in
// experiment sweeps fail loudly.

struct RunConfig {
  int k = 2;
  int t_partitions = 1;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  LearnerSpec learner;  // also drives the propensity lambda rule
  TrimBounds trim;

  void validate() const {
    if (k < 1) throw std::invalid_argument("config: k must be a positive integer");
    if (t_partitions < 1)
      throw std::invalid_argument("config: t_partitions must be positive");
    if (!(alpha > 0.0 && alpha < 1.0))
      throw std::invalid_argument("config: alpha must lie in (0,1)");
    if (!(trim.lo > 0.0 && trim.hi < 1.0))
      throw std::invalid_argument("config: trim bounds must lie in (0,1)");
    if (!(trim.lo < trim.hi))
      throw std::invalid_argument("config: trim lower >= upper");
    learner.validate();
  }
};

namespace detail {

inline void reject_unknown_keys(const json& obj,
                                const std::vector<std::string>& allowed,
                                const std::string& where) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const auto& key : allowed)
      if (item.key() == key) known = true;
    if (!known)
      throw std::invalid_argument("config: unknown key '" + item.key() +
                                  "' in " + where);
  }
}

inline void parse_learner(const json& obj, LearnerSpec& spec) {
  reject_unknown_keys(obj, {"variant", "lambda", "cv_folds", "tolerance",
                            "max_iters"},
                      "learner");
  if (obj.contains("variant"))
    spec.variant = learner_kind_from_string(obj.at("variant").get<std::string>());
  if (obj.contains("lambda")) {
    const auto& lam = obj.at("lambda");
    if (lam.is_string()) {
      const auto s = lam.get<std::string>();
      if (s == "cv")
        spec.lambda_rule = LambdaRule::cv;
      else if (s == "auto")
        spec.lambda_rule = LambdaRule::auto_formula;
      else
        throw std::invalid_argument("config: lambda must be a number, \"cv\" or \"auto\"");
    } else if (lam.is_number()) {
      spec.lambda_rule = LambdaRule::fixed;
      spec.lambda = lam.get<double>();
      if (!(spec.lambda >= 0.0))
        throw std::invalid_argument("config: lambda must be >= 0");
    } else {
      throw std::invalid_argument("config: lambda must be a number, \"cv\" or \"auto\"");
    }
  }
  if (obj.contains("cv_folds")) spec.cv_folds = obj.at("cv_folds").get<int>();
  if (obj.contains("tolerance")) spec.tolerance = obj.at("tolerance").get<double>();
  if (obj.contains("max_iters")) spec.max_iters = obj.at("max_iters").get<int>();
}

}  // namespace detail

inline RunConfig parse_config(const json& obj) {
  RunConfig cfg;
  if (!obj.is_object() && !obj.is_null())
    throw std::invalid_argument("config: top level must be an object");
  if (obj.is_object()) {
    detail::reject_unknown_keys(
        obj, {"k", "t_partitions", "alpha", "seed", "learner", "trim"},
        "config");
    if (obj.contains("k")) cfg.k = obj.at("k").get<int>();
    if (obj.contains("t_partitions"))
      cfg.t_partitions = obj.at("t_partitions").get<int>();
    if (obj.contains("alpha")) cfg.alpha = obj.at("alpha").get<double>();
    if (obj.contains("seed")) cfg.seed = obj.at("seed").get<std::uint64_t>();
    if (obj.contains("learner")) detail::parse_learner(obj.at("learner"), cfg.learner);
    if (obj.contains("trim")) {
      const auto& t = obj.at("trim");
      if (!t.is_array() || t.size() != 2)
        throw std::invalid_argument("config: trim must be [lo, hi]");
      cfg.trim.lo = t[0].get<double>();
      cfg.trim.hi = t[1].get<double>();
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  // An empty file means all defaults.
  std::string_view stripped(text);
  while (!stripped.empty() &&
         (stripped.front() == ' ' || stripped.front() == '\n' ||
          stripped.front() == '\t' || stripped.front() == '\r'))
    stripped.remove_prefix(1);
  if (stripped.empty()) return RunConfig{};
  return parse_config(json::parse(text));
}

inline json learner_json(const LearnerSpec& spec) {
  json j;
  j["variant"] = to_string(spec.variant);
  switch (spec.lambda_rule) {
    case LambdaRule::fixed: j["lambda"] = spec.lambda; break;
    case LambdaRule::cv: j["lambda"] = "cv"; break;
    case LambdaRule::auto_formula: j["lambda"] = "auto"; break;
  }
  j["cv_folds"] = spec.cv_folds;
  j["tolerance"] = spec.tolerance;
  j["max_iters"] = spec.max_iters;
  return j;
}

inline json config_json(const RunConfig& cfg) {
  json j;
  j["k"] = cfg.k;
  j["t_partitions"] = cfg.t_partitions;
  j["alpha"] = cfg.alpha;
  j["seed"] = cfg.seed;
  j["learner"] = learner_json(cfg.learner);
  j["trim"] = {cfg.trim.lo, cfg.trim.hi};
  return j;
}

// ---------------------------------------------------------------------------
// Reports.

inline json ci_json(const ConfidenceInterval& ci) { return json{ci.lo, ci.hi}; }

inline json report_json(const MeanInference& inf) {
  json j;
  j["estimate"] = inf.theta_hat;
  j["ci"] = ci_json(inf.ci);
  j["variance_components"] = {{"sigma_eps_sq", inf.sigma_eps_sq},
                              {"b_sq", inf.b_sq},
                              {"var_hat", inf.var_hat}};
  j["per_fold"] = std::vector<double>(inf.per_fold.data(),
                                      inf.per_fold.data() + inf.per_fold.size());
  j["n"] = inf.n;
  j["m"] = inf.m;
  j["k"] = inf.k;
  j["alpha"] = inf.alpha;
  return j;
}

inline json report_json(const MultiPartitionInference& inf) {
  json j;
  j["estimate"] = inf.theta_bar;
  j["ci"] = ci_json(inf.ci);
  j["variance_components"] = {{"var_bar", inf.var_bar}};
  j["per_partition"] = std::vector<double>(
      inf.per_partition_theta.data(),
      inf.per_partition_theta.data() + inf.per_partition_theta.size());
  j["per_partition_var"] = std::vector<double>(
      inf.per_partition_var.data(),
      inf.per_partition_var.data() + inf.per_partition_var.size());
  j["n"] = inf.n;
  j["m"] = inf.m;
  j["k"] = inf.k;
  j["t_partitions"] = inf.t;
  j["alpha"] = inf.alpha;
  return j;
}

inline json report_json(const VarianceInference& inf) {
  json j;
  j["estimate"] = inf.sigma_y_sq_hat;
  j["ci"] = ci_json(inf.ci);
  j["variance_components"] = {{"sigma_xi_sq", inf.sigma_xi_sq},
                              {"sigma_nu_sq", inf.sigma_nu_sq},
                              {"var_hat", inf.var_hat}};
  j["n"] = inf.n;
  j["m"] = inf.m;
  j["k"] = inf.k;
  j["alpha"] = inf.alpha;
  return j;
}

inline json report_json(const AteInference& inf) {
  json j;
  j["estimate"] = inf.delta_hat;
  j["delta_hat"] = inf.delta_hat;
  j["tau1_hat"] = inf.tau1_hat;
  j["tau0_hat"] = inf.tau0_hat;
  j["ci"] = ci_json(inf.ci);
  j["variance_components"] = {{"v1", inf.v1}, {"v2", inf.v2},
                              {"v_delta", inf.v_delta}};
  j["per_fold"] = std::vector<double>(inf.per_fold.data(),
                                      inf.per_fold.data() + inf.per_fold.size());
  j["n"] = inf.n;
  j["m"] = inf.m;
  j["k"] = inf.k;
  j["alpha"] = inf.alpha;
  return j;
}

inline json report_json(const TesInference& inf) {
  json j;
  j["estimate"] = inf.d_hat;
  j["d_hat"] = inf.d_hat;
  j["delta_hat"] = inf.delta_hat;
  j["sigma_hat"] = inf.sigma_hat;
  j["ci"] = ci_json(inf.ci);
  j["variance_components"] = {{"v3", inf.v3}, {"v4", inf.v4}, {"v_d", inf.v_d}};
  j["degenerate"] = inf.degenerate;
  j["n"] = inf.n;
  j["m"] = inf.m;
  j["k"] = inf.k;
  j["alpha"] = inf.alpha;
  return j;
}

inline json report_json(const Inference& inf) {
  json j;
  j["estimate"] = inf.estimate;
  j["ci"] = ci_json(inf.ci);
  j["variance_components"] = {{"var_hat", inf.var_hat}};
  j["n"] = inf.n;
  j["alpha"] = inf.alpha;
  return j;
}

inline json truth_json(const TruthValues& truth) {
  json j;
  j["theta"] = truth.theta;
  j["sigma_y_sq"] = truth.sigma_y_sq;
  if (std::isfinite(truth.delta)) j["delta"] = truth.delta;
  if (std::isfinite(truth.d)) j["d"] = truth.d;
  j["source"] = truth.analytic ? "analytic" : "oracle";
  if (!truth.analytic) j["oracle_draws"] = truth.oracle_draws;
  return j;
}

inline json report_json(const McReport& report) {
  json j;
  json est = json::object();
  for (const auto& e : report.estimators) {
    json one;
    one["mse"] = e.mse;
    one["mean"] = e.mean_estimate;
    one["variance"] = e.var_estimate;
    if (e.has_ci) {
      one["avg_length"] = e.avg_length;
      one["avg_coverage"] = e.avg_coverage;
    } else {
      one["avg_length"] = nullptr;
      one["avg_coverage"] = nullptr;
    }
    est[e.name] = one;
  }
  j["estimators"] = est;
  j["reps"] = report.reps;
  j["failed"] = report.failed;
  j["truth"] = truth_json(report.truth);
  j["model"] = {{"variant", to_string(report.model.variant)},
                {"n", report.model.n},
                {"m", report.model.m},
                {"p", report.model.p},
                {"s0", report.model.s0},
                {"a", report.model.a},
                {"seed", report.model.seed}};
  if (report.model.variant == SimVariant::causal_synth)
    j["model"]["note"] = "harness-invented causal design";
  j["k"] = report.options.k;
  j["alpha"] = report.options.alpha;
  j["learner"] = learner_json(report.options.learner);
  return j;
}

// One Tables-style CSV row per comparison: base vs semi-supervised.
inline std::string mc_csv(const McReport& report) {
  std::ostringstream out;
  out << "m,n,p,s0,mse_base,mse_ss,al_base,al_ss,ac_base,ac_ss\n";
  const auto row = [&](const EstimatorStats& base, const EstimatorStats& ss) {
    out << report.model.m << ',' << report.model.n << ',' << report.model.p
        << ',' << report.model.s0;
    const auto cell = [&](double v) {
      out << ',' << (std::isfinite(v) ? detail::format_value(v) : "nan");
    };
    cell(base.mse);
    cell(ss.mse);
    cell(base.avg_length);
    cell(ss.avg_length);
    cell(base.avg_coverage);
    cell(ss.avg_coverage);
    out << "\n";
  };
  if (report.model.variant == SimVariant::causal_synth) {
    row(report.by_name("delta_sample"), report.by_name("delta_hat"));
    EstimatorStats no_base;
    no_base.mse = std::numeric_limits<double>::quiet_NaN();
    no_base.avg_length = no_base.avg_coverage = no_base.mse;
    row(no_base, report.by_name("d_hat"));
  } else {
    row(report.by_name("y_bar"), report.by_name("theta_hat"));
    row(report.by_name("s_y_sq"), report.by_name("sigma_y_sq_hat"));
  }
  return out.str();
}

}  // namespace ssinfer
