#pragma once

// Full-batch plain gradient descent with periodic neural-collapse logging.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ufm/metrics.hpp"
#include "ufm/models.hpp"

namespace ufm {

/// Raised when the objective leaves the finite range or exceeds the blow-up threshold.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long iteration, double objective)
      : std::runtime_error("gradient descent diverged at iteration " + std::to_string(iteration) +
                           " (objective = " + std::to_string(objective) + ")"),
        iteration_(iteration),
        objective_(objective) {}

  long iteration() const { return iteration_; }
  double objective() const { return objective_; }

 private:
  long iteration_;
  double objective_;
};

struct InitSpec {
  std::string distribution = "standard_normal";
  double scale = 1.0;
  std::uint64_t seed = 0;
  // Optional per-block multipliers in storage order (W, H, b / W2, W1, H1); when
  // present they replace `scale` for the corresponding block.
  std::vector<double> block_scales;

  void validate() const {
    if (distribution != "standard_normal")
      throw std::invalid_argument("InitSpec: unsupported distribution '" + distribution + "'");
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw std::invalid_argument("InitSpec: scale must be positive");
    for (double s : block_scales)
      if (!(s > 0.0) || !std::isfinite(s))
        throw std::invalid_argument("InitSpec: block scales must be positive");
  }
};

struct OptimConfig {
  double step_size = 0.1;
  long max_iters = 200000;
  long log_every = 5000;
  double grad_tol = 1e-10;
  InitSpec init;
  int restarts = 0;  // 0: 3 seeds for two-layer variants, 1 for plain ones

  static constexpr double kDivergenceThreshold = 1e6;

  void validate() const {
    if (!(step_size > 0.0) || !std::isfinite(step_size))
      throw std::invalid_argument("OptimConfig: step_size must be positive");
    if (max_iters < 1) throw std::invalid_argument("OptimConfig: max_iters must be positive");
    if (log_every < 1) throw std::invalid_argument("OptimConfig: log_every must be positive");
    if (log_every > max_iters)
      throw std::invalid_argument("OptimConfig: log_every must not exceed max_iters");
    if (grad_tol < 0.0 || std::isnan(grad_tol))
      throw std::invalid_argument("OptimConfig: grad_tol must be nonnegative");
    if (restarts < 0) throw std::invalid_argument("OptimConfig: restarts must be nonnegative");
    init.validate();
  }

  int effective_restarts(ModelVariant v) const {
    if (restarts > 0) return restarts;
    return is_plain(v) ? 1 : 3;
  }
};

/// Draws every entry i.i.d. N(0,1) * scale from one mt19937_64 stream, block by
/// block in storage order, each block column-major.
inline ModelState init_state(ModelVariant variant, const ProblemDims& dims, const InitSpec& init) {
  init.validate();
  std::mt19937_64 rng(init.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t blocks = variant == ModelVariant::PlainBiasFree ? 2 : 3;
  if (!init.block_scales.empty() && init.block_scales.size() != blocks)
    throw std::invalid_argument("InitSpec: block_scales must have " + std::to_string(blocks) +
                                " entries for " + variant_name(variant));

  std::size_t block = 0;
  auto fill = [&](auto& m) {
    const double s = init.block_scales.empty() ? init.scale : init.block_scales[block];
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = s * normal(rng);
    ++block;
  };

  if (is_plain(variant)) {
    PlainState st{Matrix(dims.K, dims.d), Matrix(dims.d, dims.N()), std::nullopt};
    if (variant != ModelVariant::PlainBiasFree) st.b = Vector(dims.K);
    for_each_block(st, fill);
    return st;
  }
  TwoLayerState st{Matrix(dims.K, dims.d), Matrix(dims.d, dims.d), Matrix(dims.d, dims.N())};
  for_each_block(st, fill);
  return st;
}

struct TraceRow {
  long iteration = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  NCReport report;
};

struct Trace {
  std::vector<TraceRow> rows;
};

struct RunResult {
  ModelState state;
  Trace trace;
  long iterations = 0;    // gradient steps taken
  bool converged = false;  // stopped on grad_tol
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;

  double final_objective() const { return trace.rows.back().objective; }
};

/// Runs x <- x - step * grad(x) from `state` until max_iters or grad norm <= grad_tol.
/// Logs every log_every iterations and at the final iterate.
inline RunResult gradient_descent(ModelState state, const Matrix& Y, const ProblemDims& dims,
                                  const Hyperparams& hyper, ModelVariant variant,
                                  const OptimConfig& cfg, const ReportOptions& report_opt = {}) {
  cfg.validate();
  const Activation act = activation_of(variant);
  RunResult out;
  out.seed = cfg.init.seed;

  auto log_row = [&](long t, double obj, double gnorm) {
    TraceRow row{t, obj, gnorm, nc_report(state, dims, act, report_opt)};
    if (!out.trace.rows.empty() && obj > out.trace.rows.back().objective)
      out.warnings.push_back("objective increased between logged iterations " +
                             std::to_string(out.trace.rows.back().iteration) + " and " +
                             std::to_string(t));
    out.trace.rows.push_back(std::move(row));
  };

  for (long t = 0;; ++t) {
    auto eval = evaluate(state, Y, dims, hyper, act);
    if (!std::isfinite(eval.objective) || eval.objective > OptimConfig::kDivergenceThreshold ||
        !all_finite(eval.gradient))
      throw DivergenceError(t, eval.objective);
    const double gnorm = std::sqrt(squared_norm(eval.gradient));
    const bool stop = gnorm <= cfg.grad_tol || t >= cfg.max_iters;
    if (t % cfg.log_every == 0 || stop) log_row(t, eval.objective, gnorm);
    if (stop) {
      out.iterations = t;
      out.converged = gnorm <= cfg.grad_tol;
      break;
    }
    axpy_step(state, eval.gradient, cfg.step_size);
  }
  out.state = std::move(state);
  return out;
}

/// Runs `cfg.effective_restarts(variant)` seeds (init.seed, init.seed + 1, ...) and keeps the
/// run with the lowest final objective. A diverged seed is skipped unless all diverge.
inline RunResult best_of_seeds(const Matrix& Y, const ProblemDims& dims, const Hyperparams& hyper,
                               ModelVariant variant, const OptimConfig& cfg,
                               const ReportOptions& report_opt = {},
                               std::vector<double>* per_seed_objective = nullptr) {
  cfg.validate();
  const int runs = cfg.effective_restarts(variant);
  std::optional<RunResult> best;
  std::optional<DivergenceError> last_error;
  for (int r = 0; r < runs; ++r) {
    OptimConfig run_cfg = cfg;
    run_cfg.init.seed = cfg.init.seed + static_cast<std::uint64_t>(r);
    try {
      RunResult res = gradient_descent(init_state(variant, dims, run_cfg.init), Y, dims, hyper,
                                       variant, run_cfg, report_opt);
      if (per_seed_objective) per_seed_objective->push_back(res.final_objective());
      if (!best || res.final_objective() < best->final_objective()) best = std::move(res);
    } catch (const DivergenceError& e) {
      if (per_seed_objective) per_seed_objective->push_back(std::numeric_limits<double>::infinity());
      last_error = e;
    }
  }
  if (!best) throw *last_error;
  return std::move(*best);
}

}  // namespace ufm
