#pragma once

// Subcommand implementations behind the `ufm` executable. Each returns a process exit
// code: 0 success, 1 invalid input, 2 verification failed, 3 divergence.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ufm/analytic.hpp"
#include "ufm/io.hpp"
#include "ufm/metrics.hpp"
#include "ufm/optim.hpp"

namespace ufm {

enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitVerifyFailed = 2, kExitDiverged = 3 };

enum class LogLevel { Quiet, Info, Debug };

/// UFM_LOG=quiet|info|debug; unset or unrecognized means info.
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("UFM_LOG");
  if (!v) return LogLevel::Info;
  const std::string s(v);
  if (s == "quiet") return LogLevel::Quiet;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

struct CommandOptions {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool center = false;
  LogLevel log = LogLevel::Info;
  std::ostream* msg = &std::cerr;

  void info(const std::string& s) const {
    if (log != LogLevel::Quiet) *msg << s << "\n";
  }
  void debug(const std::string& s) const {
    if (log == LogLevel::Debug) *msg << s << "\n";
  }
  void error(const std::string& s) const { *msg << "error: " << s << "\n"; }
};

inline ExperimentConfig load_experiment(const std::filesystem::path& path,
                                        const CommandOptions& opt) {
  ExperimentConfig cfg = parse_experiment_config(read_json_file(path));
  if (opt.seed) cfg.seed = cfg.optim.init.seed = *opt.seed;
  if (opt.out) cfg.output_path = *opt.out;
  return cfg;
}

// ---- oracle -----------------------------------------------------------------

/// Closed-form minimizer for the config's variant; nullopt for plain_reg_bias.
/// Frames for the non-unique rotations are drawn from the config seed (R) and seed + 1 (Rtilde).
inline std::optional<OracleSolution> oracle_for(const ExperimentConfig& cfg) {
  const auto& d = cfg.dims;
  switch (cfg.variant) {
    case ModelVariant::PlainBiasFree:
      return bias_free_minimizer(d, cfg.hyper.lambda_W, cfg.hyper.lambda_H,
                                random_orthonormal(d.d, d.K, cfg.seed));
    case ModelVariant::PlainUnregBias:
      return unreg_bias_minimizer(d, cfg.hyper.lambda_W, cfg.hyper.lambda_H,
                                random_orthonormal(d.d, d.K, cfg.seed));
    case ModelVariant::TwoLayerLinear:
      return two_layer_linear_minimizer(d, cfg.hyper, random_orthonormal(d.d, d.K, cfg.seed),
                                random_orthonormal(d.d, d.K, cfg.seed + 1));
    case ModelVariant::TwoLayerReLU:
      return two_layer_relu_minimizer(d, cfg.hyper);
    case ModelVariant::PlainRegBias:
      break;
  }
  return std::nullopt;
}

struct OracleDiagnostics {
  double evaluated_objective = 0.0;   // objective recomputed from the oracle state
  double stationarity_residual = 0.0;  // gradient norm at the oracle state
  std::optional<double> quartic_residual;
  std::optional<double> balance_residual;  // |lW2 sW^2 - sqrt(n lW1 lH1) sH|
  std::optional<bool> nonnegative;         // ReLU: W1 H1 >= 0 entrywise
  std::optional<double> linear_objective;  // ReLU: objective of the same state without ReLU
};

inline OracleDiagnostics diagnose_oracle(const ExperimentConfig& cfg, const OracleSolution& sol) {
  const Matrix Y = build_label_matrix(cfg.dims);
  const auto act = activation_of(cfg.variant);
  const auto eval = evaluate(sol.state, Y, cfg.dims, cfg.hyper, act);
  OracleDiagnostics out;
  out.evaluated_objective = eval.objective;
  out.stationarity_residual = std::sqrt(squared_norm(eval.gradient));
  if (!is_plain(cfg.variant) && !sol.is_zero_solution) {
    const double a = std::sqrt(cfg.dims.n * cfg.hyper.lambda_W1 * cfg.hyper.lambda_H1);
    const double s = *sol.sigma_W;
    out.quartic_residual = std::abs(cfg.hyper.lambda_W2 * s * s * s * s - a * s + cfg.dims.K * a * a);
    out.balance_residual = std::abs(cfg.hyper.lambda_W2 * s * s - a * *sol.sigma_Hbar);
  }
  if (cfg.variant == ModelVariant::TwoLayerReLU) {
    const auto& st = std::get<TwoLayerState>(sol.state);
    out.nonnegative = ((st.W1 * st.H1).array() >= 0.0).all();
    out.linear_objective = evaluate(sol.state, Y, cfg.dims, cfg.hyper, Activation::Linear).objective;
  }
  return out;
}

// ---- verification -------------------------------------------------------------

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

inline json to_json(const std::vector<CheckResult>& checks) {
  json arr = json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"passed", c.passed}});
  return arr;
}

inline bool all_passed(const std::vector<CheckResult>& checks) {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

struct VerifyTolerances {
  double objective_rel = 1e-3;
  double zero_norm = 1e-6;
  double plain_nc1 = 1e-5;      // bias-free
  double plain_nc = 1e-4;       // bias-free NC2/NC3, unregularized-bias NC1-3, bias, h_G
  double two_layer_nc = 1e-3;
  double nuclear_rel = 1e-3;
};

/// Compares a finished run against the oracle with the per-variant metric thresholds.
inline std::vector<CheckResult> verify_run(const ExperimentConfig& cfg, const ModelState& state,
                                           const NCReport& report, double final_objective,
                                           const OracleSolution& oracle,
                                           const VerifyTolerances& tol = {}) {
  std::vector<CheckResult> checks;
  auto check = [&](std::string name, double value, double threshold) {
    checks.push_back({std::move(name), value, threshold, std::isfinite(value) && value <= threshold});
  };
  check("objective_rel_err",
        std::abs(final_objective - oracle.objective_value) / std::abs(oracle.objective_value),
        tol.objective_rel);

  if (oracle.is_zero_solution) {
    if (const auto* p = std::get_if<PlainState>(&state)) {
      check("norm_W", p->W.norm(), tol.zero_norm);
      check("norm_H", p->H.norm(), tol.zero_norm);
      if (p->b) {
        const auto& ob = *std::get<PlainState>(oracle.state).b;
        check("bias_max_err", (*p->b - ob).cwiseAbs().maxCoeff(), tol.plain_nc);
      }
    } else {
      const auto& s = std::get<TwoLayerState>(state);
      check("norm_W2", s.W2.norm(), tol.zero_norm);
      check("norm_W1", s.W1.norm(), tol.zero_norm);
      check("norm_H1", s.H1.norm(), tol.zero_norm);
    }
    return checks;
  }

  auto level = [&](const char* name) -> const LevelMetrics& {
    const LevelMetrics* l = report.level(name);
    if (!l) throw std::logic_error(std::string("report lacks level ") + name);
    return *l;
  };
  const double nc3 = report.nc3.value_or(std::nan(""));
  switch (cfg.variant) {
    case ModelVariant::PlainBiasFree:
      check("nc1_h", level("h").nc1, tol.plain_nc1);
      check("nc2of_h", level("h").nc2_of, tol.plain_nc);
      check("nc3", nc3, tol.plain_nc);
      break;
    case ModelVariant::PlainUnregBias: {
      const auto& p = std::get<PlainState>(state);
      const double inv_k = 1.0 / cfg.dims.K;
      check("bias_max_err", (p.b->array() - inv_k).abs().maxCoeff(), tol.plain_nc);
      check("global_mean_norm", class_means(p.H, cfg.dims).h_G.norm(), tol.plain_nc);
      check("nc1_h", level("h").nc1, tol.plain_nc);
      check("nc2etf_h", level("h").nc2_etf, tol.plain_nc);
      check("nc3", nc3, tol.plain_nc);
      break;
    }
    case ModelVariant::TwoLayerLinear:
      for (const char* l : {"h1", "h2"}) {
        check(std::string("nc1_") + l, level(l).nc1, tol.two_layer_nc);
        check(std::string("nc2of_") + l, level(l).nc2_of, tol.two_layer_nc);
      }
      check("nc3", nc3, tol.two_layer_nc);
      break;
    case ModelVariant::TwoLayerReLU: {
      check("nc1_post", level("post").nc1, tol.two_layer_nc);
      check("nc2of_post", level("post").nc2_of, tol.two_layer_nc);
      check("nc3", nc3, tol.two_layer_nc);
      const auto f = forward_two_layer(std::get<TwoLayerState>(state), Activation::ReLU);
      const double pre = nuclear_norm(f.pre);
      check("nuclear_norm_rel_gap", std::abs(pre - nuclear_norm(f.post)) / pre, tol.nuclear_rel);
      break;
    }
    case ModelVariant::PlainRegBias:
      break;
  }
  return checks;
}

// ---- run ----------------------------------------------------------------------

struct RunOutcome {
  RunResult run;
  std::vector<double> per_seed_objective;
  std::optional<OracleSolution> oracle;
};

inline RunOutcome run_experiment(const ExperimentConfig& cfg) {
  RunOutcome out;
  out.oracle = oracle_for(cfg);
  const Matrix Y = build_label_matrix(cfg.dims);
  out.run = best_of_seeds(Y, cfg.dims, cfg.hyper, cfg.variant, cfg.optim, ReportOptions{cfg.center},
                          &out.per_seed_objective);
  return out;
}

inline json run_summary(const ExperimentConfig& cfg, const RunOutcome& o) {
  json seeds = json::array();
  for (std::size_t r = 0; r < o.per_seed_objective.size(); ++r) {
    const double v = o.per_seed_objective[r];
    seeds.push_back({{"seed", cfg.seed + r}, {"final_objective", std::isfinite(v) ? json(v) : json("diverged")}});
  }
  json s{{"final_objective", o.run.final_objective()},
         {"final_report", to_json(o.run.trace.rows.back().report)},
         {"seed", o.run.seed},
         {"seeds_tried", seeds},
         {"iterations", o.run.iterations},
         {"converged", o.run.converged},
         {"final_grad_norm", o.run.trace.rows.back().grad_norm},
         {"warnings", o.run.warnings},
         {"config", to_json(cfg)}};
  s["analytic_objective"] = o.oracle ? json(o.oracle->objective_value) : json(nullptr);
  return s;
}

namespace detail {

template <typename F>
int guarded(const CommandOptions& opt, F&& body) {
  try {
    return body();
  } catch (const DivergenceError& e) {
    opt.error(e.what());
    return kExitDiverged;
  } catch (const ConfigError& e) {
    opt.error(e.what());
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    opt.error(e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    opt.error(e.what());
    return kExitInvalid;
  }
}

inline void write_run_outputs(const ExperimentConfig& cfg, const RunOutcome& o, const json& summary,
                              const CommandOptions& opt) {
  const auto levels = level_names(o.run.state, activation_of(cfg.variant));
  write_text_file(cfg.output_path + ".csv", trace_to_csv(o.run.trace, levels));
  write_text_file(cfg.output_path + ".json", summary.dump(2) + "\n");
  opt.info("wrote " + cfg.output_path + ".csv and " + cfg.output_path + ".json");
}

inline void log_run(const RunOutcome& o, const CommandOptions& opt) {
  for (const auto& w : o.run.warnings) opt.info("warning: " + w);
  for (const auto& row : o.run.trace.rows)
    opt.debug("iter " + std::to_string(row.iteration) + " objective " + format_double(row.objective) +
              " grad_norm " + format_double(row.grad_norm));
  std::string line = "final objective " + format_double(o.run.final_objective()) + " (seed " +
                     std::to_string(o.run.seed) + ", " + std::to_string(o.run.iterations) + " iterations)";
  if (o.oracle) line += ", analytic " + format_double(o.oracle->objective_value);
  opt.info(line);
}

}  // namespace detail

inline int cmd_run(const std::filesystem::path& config_file, const CommandOptions& opt = {}) {
  return detail::guarded(opt, [&] {
    const ExperimentConfig cfg = load_experiment(config_file, opt);
    const RunOutcome o = run_experiment(cfg);
    detail::log_run(o, opt);
    detail::write_run_outputs(cfg, o, run_summary(cfg, o), opt);
    return int{kExitOk};
  });
}

inline int cmd_verify(const std::filesystem::path& config_file, const CommandOptions& opt = {}) {
  return detail::guarded(opt, [&] {
    const ExperimentConfig cfg = load_experiment(config_file, opt);
    if (cfg.variant == ModelVariant::PlainRegBias) {
      opt.error("plain_reg_bias has no closed-form minimizer to verify against");
      return int{kExitInvalid};
    }
    const RunOutcome o = run_experiment(cfg);
    detail::log_run(o, opt);
    const auto checks = verify_run(cfg, o.run.state, o.run.trace.rows.back().report,
                                   o.run.final_objective(), *o.oracle);
    for (const auto& c : checks)
      opt.info(std::string(c.passed ? "PASS " : "FAIL ") + c.name + " = " + format_double(c.value) +
               " (threshold " + format_double(c.threshold) + ")");
    json summary = run_summary(cfg, o);
    summary["verification"] = to_json(checks);
    summary["verified"] = all_passed(checks);
    detail::write_run_outputs(cfg, o, summary, opt);
    return int{all_passed(checks) ? kExitOk : kExitVerifyFailed};
  });
}

inline int cmd_oracle(const std::filesystem::path& config_file, const CommandOptions& opt = {}) {
  return detail::guarded(opt, [&] {
    const ExperimentConfig cfg = load_experiment(config_file, opt);
    const auto sol = oracle_for(cfg);
    if (!sol) {
      opt.error("plain_reg_bias has no closed-form minimizer");
      return int{kExitInvalid};
    }
    const auto diag = diagnose_oracle(cfg, *sol);
    json j{{"variant", variant_name(cfg.variant)},
           {"objective", sol->objective_value},
           {"evaluated_objective", diag.evaluated_objective},
           {"stationarity_residual", diag.stationarity_residual},
           {"zero_regime", sol->is_zero_solution},
           {"report", to_json(nc_report(sol->state, cfg.dims, activation_of(cfg.variant),
                                        ReportOptions{cfg.center}))},
           {"config", to_json(cfg)}};
    if (is_plain(cfg.variant)) {
      j["c"] = *sol->c;
      j["rho"] = sol->rho;
    } else {
      j["sigma_W"] = sol->sigma_W.value_or(0.0);
      j["sigma_Hbar"] = sol->sigma_Hbar.value_or(0.0);
    }
    if (diag.quartic_residual) j["quartic_residual"] = *diag.quartic_residual;
    if (diag.balance_residual) j["balance_residual"] = *diag.balance_residual;
    if (diag.nonnegative) j["post_activation_nonnegative"] = *diag.nonnegative;
    if (diag.linear_objective) j["linear_objective"] = *diag.linear_objective;
    const std::string path = cfg.output_path + "_oracle.json";
    write_text_file(path, j.dump(2) + "\n");
    opt.info("oracle objective " + format_double(sol->objective_value) + ", stationarity residual " +
             format_double(diag.stationarity_residual) + "; wrote " + path);
    return int{kExitOk};
  });
}

// ---- asymptotic ridge experiment ---------------------------------------------

struct AsymptoticConfig {
  int K = 4;
  int d = 20;
  double lambda_W = 0.005;
  double lambda_H_tilde = 0.005;
  double sigma_e = 0.5;
  std::string noise = "gaussian";
  std::vector<int> n_values{100, 1000, 10000};
  int trials = 5;
  std::uint64_t seed = 0;
  std::string output_path = "ufm_asymptotic";
};

inline AsymptoticConfig parse_asymptotic_config(const json& j) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown_keys(j, {"dims", "lambda_W", "lambda_H_tilde", "sigma_e", "noise", "n_values",
                          "trials", "seed", "output_path"},
                      "config");
  AsymptoticConfig c;
  const ProblemDims dims = parse_dims(get_field<json>(j, "dims", "config"), false);
  c.K = dims.K;
  c.d = dims.d;
  if (c.d < c.K) throw ConfigError("dims: requires d >= K");
  c.lambda_W = positive_field(j, "lambda_W", "config");
  c.lambda_H_tilde = positive_field(j, "lambda_H_tilde", "config");
  c.sigma_e = get_field<double>(j, "sigma_e", "config");
  if (!(c.sigma_e >= 0.0) || !std::isfinite(c.sigma_e))
    throw ConfigError("config.sigma_e must be nonnegative");
  c.noise = get_or<std::string>(j, "noise", c.noise, "config");
  if (c.noise != "gaussian" && c.noise != "uniform")
    throw ConfigError("config.noise must be 'gaussian' or 'uniform'");
  c.n_values = get_field<std::vector<int>>(j, "n_values", "config");
  if (c.n_values.empty()) throw ConfigError("config.n_values must not be empty");
  for (std::size_t i = 0; i < c.n_values.size(); ++i) {
    if (c.n_values[i] < 1) throw ConfigError("config.n_values must be positive");
    if (i && c.n_values[i] <= c.n_values[i - 1])
      throw ConfigError("config.n_values must be strictly increasing");
  }
  c.trials = get_or<int>(j, "trials", c.trials, "config");
  if (c.trials < 1) throw ConfigError("config.trials must be at least 1");
  c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
  c.output_path = get_or<std::string>(j, "output_path", c.output_path, "config");
  return c;
}

inline json to_json(const AsymptoticConfig& c) {
  return json{{"dims", {{"K", c.K}, {"d", c.d}}},
              {"lambda_W", c.lambda_W},
              {"lambda_H_tilde", c.lambda_H_tilde},
              {"sigma_e", c.sigma_e},
              {"noise", c.noise},
              {"n_values", c.n_values},
              {"trials", c.trials},
              {"seed", c.seed},
              {"output_path", c.output_path}};
}

struct AsymptoticResult {
  struct Cell {
    int n;
    int trial;
    double rel_err;
  };
  std::vector<Cell> cells;
  std::vector<double> mean_rel_err;  // one per n value
  double kappa = 1.0;
  bool non_increasing = true;
  bool passed = false;

  static constexpr double kFinalThreshold = 5e-2;
  // Increases below this are rounding noise (noiseless runs sit at ~1e-15).
  static constexpr double kRoundoffSlack = 1e-12;
};

/// Relative error of the ridge weights on noisy collapsed features against kappa * W*.
/// The noise for (n, trial) comes from an engine seeded with seed_seq{seed + trial, n}.
inline AsymptoticResult run_asymptotic(const AsymptoticConfig& c) {
  AsymptoticResult out;
  out.kappa = asymptotic_attenuation(c.sigma_e, c.K, c.lambda_H_tilde, c.lambda_W);
  const Frame frame = random_orthonormal(c.d, c.K, c.seed);
  for (int n : c.n_values) {
    const ProblemDims dims(c.K, c.d, n);
    const auto sol = bias_free_minimizer(dims, c.lambda_W, c.lambda_H_tilde / n, frame);
    const auto& star = std::get<PlainState>(sol.state);
    const Matrix target = out.kappa * star.W;
    const Matrix Y = build_label_matrix(dims);
    double sum = 0.0;
    for (int t = 0; t < c.trials; ++t) {
      std::seed_seq seq{static_cast<std::uint64_t>(c.seed + t), static_cast<std::uint64_t>(n)};
      std::mt19937_64 rng(seq);
      Matrix noisy = star.H;
      if (c.sigma_e > 0.0) {
        std::normal_distribution<double> gauss(0.0, c.sigma_e);
        const double half = std::sqrt(3.0) * c.sigma_e;
        std::uniform_real_distribution<double> unif(-half, half);
        for (Eigen::Index j = 0; j < noisy.cols(); ++j)
          for (Eigen::Index i = 0; i < noisy.rows(); ++i)
            noisy(i, j) += c.noise == "gaussian" ? gauss(rng) : unif(rng);
      }
      const Matrix W_hat = ridge_weights(noisy, Y, dims, c.lambda_W);
      const double err = (W_hat - target).norm() / target.norm();
      out.cells.push_back({n, t, err});
      sum += err;
    }
    out.mean_rel_err.push_back(sum / c.trials);
  }
  for (std::size_t i = 1; i < out.mean_rel_err.size(); ++i)
    out.non_increasing = out.non_increasing &&
                         out.mean_rel_err[i] <= out.mean_rel_err[i - 1] + AsymptoticResult::kRoundoffSlack;
  out.passed = out.non_increasing && out.mean_rel_err.back() <= AsymptoticResult::kFinalThreshold;
  return out;
}

inline int cmd_asymptotic(const std::filesystem::path& config_file, const CommandOptions& opt = {}) {
  return detail::guarded(opt, [&] {
    AsymptoticConfig c = parse_asymptotic_config(read_json_file(config_file));
    if (opt.seed) c.seed = *opt.seed;
    if (opt.out) c.output_path = *opt.out;
    const AsymptoticResult r = run_asymptotic(c);
    std::string csv = "n,trial,rel_err\n";
    for (const auto& cell : r.cells)
      csv += std::to_string(cell.n) + "," + std::to_string(cell.trial) + "," + format_double(cell.rel_err) + "\n";
    json per_n = json::array();
    for (std::size_t i = 0; i < c.n_values.size(); ++i) {
      per_n.push_back({{"n", c.n_values[i]}, {"mean_rel_err", r.mean_rel_err[i]}});
      opt.info("n = " + std::to_string(c.n_values[i]) + ": mean rel_err " + format_double(r.mean_rel_err[i]));
    }
    const json summary{{"kappa", r.kappa},
                       {"per_n", per_n},
                       {"non_increasing", r.non_increasing},
                       {"final_mean_threshold", AsymptoticResult::kFinalThreshold},
                       {"passed", r.passed},
                       {"config", to_json(c)}};
    write_text_file(c.output_path + ".csv", csv);
    write_text_file(c.output_path + ".json", summary.dump(2) + "\n");
    opt.info("wrote " + c.output_path + ".csv and " + c.output_path + ".json");
    return int{r.passed ? kExitOk : kExitVerifyFailed};
  });
}

// ---- metrics on imported features --------------------------------------------

inline int cmd_metrics(const std::filesystem::path& features_file,
                       const std::optional<std::filesystem::path>& weights_file,
                       const CommandOptions& opt = {}, std::ostream& out = std::cout) {
  return detail::guarded(opt, [&] {
    const FeatureFile f = read_feature_file(features_file);
    std::optional<Matrix> W;
    if (weights_file) {
      W = read_matrix_file(*weights_file);
      if (W->rows() != f.dims.K || W->cols() != f.dims.d)
        throw ConfigError("weights must be K x d = " + detail::shape_str(f.dims.K, f.dims.d) + ", got " +
                          detail::shape_str(W->rows(), W->cols()));
    }
    const NCReport report = nc_report_features(f.H, f.dims, W, ReportOptions{opt.center});
    json j{{"dims", {{"K", f.dims.K}, {"d", f.dims.d}, {"n", f.dims.n}}},
           {"center", opt.center},
           {"report", to_json(report)}};
    const std::string text = j.dump(2) + "\n";
    out << text;
    if (opt.out) write_text_file(*opt.out, text);
    return int{kExitOk};
  });
}

}  // namespace ufm
