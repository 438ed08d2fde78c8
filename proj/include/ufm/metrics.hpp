#pragma once

// Neural-collapse measurements on a class-major feature matrix H (d x Kn):
//   NC1       (1/K) tr(Sigma_W Sigma_B^+)
//   NC2-ETF   || G/||G||_F - (I - 11^T/K)/sqrt(K-1) ||_F,  G = Hbar^T Hbar
//   NC2-OF    || G/||G||_F - I/sqrt(K) ||_F
//   NC3       || W/||W||_F - Hbar^T/||Hbar||_F ||_F
//
// Degenerate inputs (zero Sigma_B, zero mean matrix, zero weights) never throw;
// they return the documented sentinel and set a flag.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ufm/core.hpp"
#include "ufm/models.hpp"

namespace ufm {

struct ClassMeans {
  Matrix Hbar;  // d x K
  Vector h_G;   // d
};

inline ClassMeans class_means(const Matrix& H, const ProblemDims& dims) {
  require_shape(H, H.rows(), dims.N(), "class_means: H");
  ClassMeans out;
  out.Hbar.resize(H.rows(), dims.K);
  // Averaging offsets from the first column keeps the mean of identical columns exact.
  for (int k = 0; k < dims.K; ++k) {
    const auto block = H.middleCols(k * dims.n, dims.n);
    const Vector anchor = block.col(0);
    out.Hbar.col(k) = anchor + (block.colwise() - anchor).rowwise().mean();
  }
  out.h_G = out.Hbar.rowwise().mean();
  return out;
}

struct ScatterPair {
  Matrix sigma_W;
  Matrix sigma_B;
};

inline ScatterPair scatter_matrices(const Matrix& H, const ProblemDims& dims) {
  const ClassMeans means = class_means(H, dims);
  Matrix centered(H.rows(), H.cols());
  for (int k = 0; k < dims.K; ++k)
    centered.middleCols(k * dims.n, dims.n) =
        H.middleCols(k * dims.n, dims.n).colwise() - means.Hbar.col(k);
  const Matrix between = means.Hbar.colwise() - means.h_G;

  ScatterPair out;
  out.sigma_W = Matrix::Zero(H.rows(), H.rows());
  out.sigma_W.selfadjointView<Eigen::Lower>().rankUpdate(centered, 1.0 / dims.N());
  out.sigma_W = out.sigma_W.selfadjointView<Eigen::Lower>();
  out.sigma_B = Matrix::Zero(H.rows(), H.rows());
  out.sigma_B.selfadjointView<Eigen::Lower>().rankUpdate(between, 1.0 / dims.K);
  out.sigma_B = out.sigma_B.selfadjointView<Eigen::Lower>();
  return out;
}

/// A metric value with a flag for inputs where the formula is degenerate.
struct MetricValue {
  double value = 0.0;
  bool degenerate = false;
};

/// Sigma_B = 0 yields 0 (pseudoinverse of zero is zero) with the degenerate flag set.
inline MetricValue nc1(const Matrix& H, const ProblemDims& dims) {
  const ScatterPair sp = scatter_matrices(H, dims);
  const double b_norm = sp.sigma_B.norm();
  if (b_norm == 0.0) return {0.0, true};
  const double value = (sp.sigma_W * pseudoinverse(sp.sigma_B)).trace() / dims.K;
  // Rounding can leave tiny negative traces on exactly collapsed features.
  return {std::max(value, 0.0), false};
}

namespace detail {

inline MetricValue gram_distance(const Matrix& Hbar, const Matrix& target) {
  const Matrix G = Hbar.transpose() * Hbar;
  const double g_norm = G.norm();
  if (g_norm == 0.0) return {target.norm(), true};
  return {(G / g_norm - target).norm(), false};
}

}  // namespace detail

inline MetricValue nc2_of(const Matrix& Hbar) {
  const auto K = Hbar.cols();
  const Matrix target = Matrix::Identity(K, K) / std::sqrt(static_cast<double>(K));
  return detail::gram_distance(Hbar, target);
}

/// With `center`, the global mean of the columns is subtracted first.
inline MetricValue nc2_etf(const Matrix& Hbar, bool center = false) {
  const auto K = Hbar.cols();
  if (K < 2) throw DimensionError("nc2_etf: requires K >= 2");
  const Matrix target = (Matrix::Identity(K, K) - Matrix::Constant(K, K, 1.0 / K)) /
                        std::sqrt(static_cast<double>(K - 1));
  if (!center) return detail::gram_distance(Hbar, target);
  const Matrix centered = Hbar.colwise() - Hbar.rowwise().mean();
  return detail::gram_distance(centered, target);
}

/// Zero W or Hbar yields 2 (the diameter of the unit sphere) with the flag set.
inline MetricValue nc3(const Matrix& W, const Matrix& Hbar) {
  if (W.rows() != Hbar.cols() || W.cols() != Hbar.rows())
    throw DimensionError("nc3: W must be the shape of Hbar^T");
  const double w_norm = W.norm();
  const double h_norm = Hbar.norm();
  if (w_norm == 0.0 || h_norm == 0.0) return {2.0, true};
  return {(W / w_norm - Hbar.transpose() / h_norm).norm(), false};
}

struct LevelMetrics {
  std::string name;
  double nc1 = 0.0;
  double nc2_etf = 0.0;
  double nc2_of = 0.0;
  bool degenerate = false;
};

struct NCReport {
  std::vector<LevelMetrics> levels;  // shallow to deep; NC3 refers to the last level
  std::optional<double> nc3;  // absent when no classifier weights are available
  bool nc3_degenerate = false;

  const LevelMetrics* level(const std::string& name) const {
    for (const auto& l : levels)
      if (l.name == name) return &l;
    return nullptr;
  }
  const LevelMetrics& top() const { return levels.back(); }
  bool any_degenerate() const {
    bool any = nc3_degenerate;
    for (const auto& l : levels) any = any || l.degenerate;
    return any;
  }
};

struct ReportOptions {
  bool center = false;  // centering for NC2-ETF
};

inline LevelMetrics level_metrics(std::string name, const Matrix& H, const ProblemDims& dims,
                                  const ReportOptions& opt) {
  const ClassMeans means = class_means(H, dims);
  const MetricValue v1 = nc1(H, dims);
  const MetricValue etf = nc2_etf(means.Hbar, opt.center);
  const MetricValue of = nc2_of(means.Hbar);
  return {std::move(name), v1.value, etf.value, of.value,
          v1.degenerate || etf.degenerate || of.degenerate};
}

/// Level names per model: plain {h}; linear two-layer {h1, h2};
/// ReLU two-layer {h1, pre, post}.
inline std::vector<std::string> level_names(const ModelState& state, Activation act) {
  if (std::holds_alternative<PlainState>(state)) return {"h"};
  if (act == Activation::ReLU) return {"h1", "pre", "post"};
  return {"h1", "h2"};
}

inline NCReport nc_report(const ModelState& state, const ProblemDims& dims, Activation act,
                          const ReportOptions& opt = {}) {
  NCReport report;
  auto set_nc3 = [&](const Matrix& W, const Matrix& top_features) {
    const MetricValue v = nc3(W, class_means(top_features, dims).Hbar);
    report.nc3 = v.value;
    report.nc3_degenerate = v.degenerate;
  };
  if (const auto* p = std::get_if<PlainState>(&state)) {
    report.levels.push_back(level_metrics("h", p->H, dims, opt));
    set_nc3(p->W, p->H);
    return report;
  }
  const auto& s = std::get<TwoLayerState>(state);
  const TwoLayerForward f = forward_two_layer(s, act);
  report.levels.push_back(level_metrics("h1", s.H1, dims, opt));
  if (act == Activation::ReLU) {
    report.levels.push_back(level_metrics("pre", f.pre, dims, opt));
    report.levels.push_back(level_metrics("post", f.post, dims, opt));
  } else {
    report.levels.push_back(level_metrics("h2", f.pre, dims, opt));
  }
  set_nc3(s.W2, f.post);
  return report;
}

/// Metrics for externally supplied features, with optional classifier weights for NC3.
inline NCReport nc_report_features(const Matrix& H, const ProblemDims& dims,
                                   const std::optional<Matrix>& W, const ReportOptions& opt = {}) {
  NCReport report;
  report.levels.push_back(level_metrics("h", H, dims, opt));
  if (W) {
    const MetricValue v = nc3(*W, class_means(H, dims).Hbar);
    report.nc3 = v.value;
    report.nc3_degenerate = v.degenerate;
  }
  return report;
}

}  // namespace ufm
