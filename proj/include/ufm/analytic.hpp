#pragma once

// Closed-form global minimizers of the unconstrained-features models and the
// scalar reductions they are built from.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ufm/core.hpp"
#include "ufm/models.hpp"

namespace ufm {

/// c = K sqrt(n lW lH). c <= 1 gives a nonzero collapsed minimizer, c > 1 the zero one.
struct CollapseConstant {
  double c = 0.0;
  bool zero_regime() const { return c > 1.0; }
};

inline CollapseConstant collapse_constant(const ProblemDims& dims, double lambda_W,
                                          double lambda_H) {
  if (!(lambda_W > 0.0) || !(lambda_H > 0.0))
    throw std::invalid_argument("collapse_constant: regularization weights must be positive");
  return {dims.K * std::sqrt(dims.n * lambda_H * lambda_W)};
}

struct ProfileMin {
  double beta_star = 0.0;
  double value = 0.0;
};

/// Minimum of the reduced bias-free objective as a function of c.
inline ProfileMin bias_free_profile_min(double c) {
  if (!(c > 0.0)) throw std::invalid_argument("bias_free_profile_min: c must be positive");
  if (c <= 1.0) return {1.0 - c, c - 0.5 * c * c};
  return {0.0, 0.5};
}

/// Minimum of the reduced unregularized-bias objective; the (K-1)/K factor is the
/// fraction of label energy left after the optimal bias absorbs the mean.
inline ProfileMin unreg_bias_profile_min(double c, int K) {
  if (!(c > 0.0)) throw std::invalid_argument("unreg_bias_profile_min: c must be positive");
  if (K < 2) throw std::invalid_argument("unreg_bias_profile_min: K must be >= 2");
  const double f = static_cast<double>(K - 1) / K;
  if (c <= 1.0) return {(1.0 - c) * f, f * (c - 0.5 * c * c)};
  return {0.0, 0.5 * f};
}

struct OracleSolution {
  ModelState state;
  double objective_value = 0.0;
  double rho = 0.0;  // squared norm of each class-mean feature (plain models)
  bool is_zero_solution = false;
  std::optional<double> c;
  std::optional<double> sigma_W;
  std::optional<double> sigma_Hbar;
};

namespace detail {

inline void require_frame(const Frame& frame, const ProblemDims& dims, const char* what) {
  if (frame.d() != dims.d || frame.K() != dims.K)
    throw DimensionError(std::string(what) + ": frame must be d x K");
}

}  // namespace detail

/// Bias-free plain model: H* = Hbar (x) 1_n^T with Hbar = sqrt(rho) P, W* = sqrt(n lH / lW) Hbar^T.
inline OracleSolution bias_free_minimizer(const ProblemDims& dims, double lambda_W,
                                         double lambda_H, const Frame& frame) {
  if (dims.d < dims.K) throw DimensionError("bias_free_minimizer: requires d >= K");
  detail::require_frame(frame, dims, "bias_free_minimizer");
  const auto cc = collapse_constant(dims, lambda_W, lambda_H);

  OracleSolution sol;
  sol.c = cc.c;
  if (cc.zero_regime()) {
    sol.is_zero_solution = true;
    sol.state = PlainState{Matrix::Zero(dims.K, dims.d), Matrix::Zero(dims.d, dims.N()), std::nullopt};
    sol.objective_value = 0.5;
    return sol;
  }
  sol.rho = (1.0 - cc.c) * std::sqrt(lambda_W / (dims.n * lambda_H));
  const Matrix Hbar = std::sqrt(sol.rho) * frame.matrix();
  const double align = std::sqrt(dims.n * lambda_H / lambda_W);
  sol.state = PlainState{align * Hbar.transpose(), kron_ones(Hbar, dims.n), std::nullopt};
  sol.objective_value = bias_free_profile_min(cc.c).value;
  return sol;
}

/// Unregularized-bias plain model: class means form a simplex ETF with squared norm rho,
/// zero global mean, W* = sqrt(n lH / lW) Hbar^T and b* = 1_K / K.
inline OracleSolution unreg_bias_minimizer(const ProblemDims& dims, double lambda_W,
                                         double lambda_H, const Frame& frame) {
  if (dims.d < dims.K) throw DimensionError("unreg_bias_minimizer: requires d >= K");
  if (dims.K < 2) throw DimensionError("unreg_bias_minimizer: requires K >= 2");
  detail::require_frame(frame, dims, "unreg_bias_minimizer");
  const auto cc = collapse_constant(dims, lambda_W, lambda_H);

  OracleSolution sol;
  sol.c = cc.c;
  const Vector b = Vector::Constant(dims.K, 1.0 / dims.K);
  if (cc.zero_regime()) {
    sol.is_zero_solution = true;
    sol.state = PlainState{Matrix::Zero(dims.K, dims.d), Matrix::Zero(dims.d, dims.N()), b};
    sol.objective_value = unreg_bias_profile_min(cc.c, dims.K).value;
    return sol;
  }
  const double f = static_cast<double>(dims.K - 1) / dims.K;
  sol.rho = (1.0 - cc.c) * f * std::sqrt(lambda_W / (dims.n * lambda_H));
  // general_simplex_etf has unit-norm columns.
  const Matrix Hbar = std::sqrt(sol.rho) * general_simplex_etf(dims.K, dims.d, frame);
  const double align = std::sqrt(dims.n * lambda_H / lambda_W);
  sol.state = PlainState{align * Hbar.transpose(), kron_ones(Hbar, dims.n), b};
  sol.objective_value = unreg_bias_profile_min(cc.c, dims.K).value;
  return sol;
}

/// Singular values of the (W2, Hbar) subproblem
///   f1 = 1/2 (sW sH - 1)^2 + K lW2/2 sW^2 + K sqrt(n lW1 lH1) sH.
struct TwoLayerSingularValues {
  double sigma_W = 0.0;
  double sigma_Hbar = 0.0;
  double f1 = 0.5;
  bool zero_regime = true;
};

/// Real roots of a monic-normalized polynomial via eigenvalues of its companion matrix.
/// `coeffs` are in decreasing degree order; the leading coefficient must be nonzero.
inline std::vector<std::complex<double>> polynomial_roots(const std::vector<double>& coeffs) {
  if (coeffs.size() < 2 || coeffs.front() == 0.0)
    throw std::invalid_argument("polynomial_roots: need degree >= 1 with nonzero leading term");
  const int deg = static_cast<int>(coeffs.size()) - 1;
  Matrix companion = Matrix::Zero(deg, deg);
  for (int j = 0; j < deg; ++j) companion(0, j) = -coeffs[j + 1] / coeffs[0];
  for (int i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Matrix> es(companion, false);
  if (es.info() != Eigen::Success) throw NumericalError("polynomial_roots: eigensolver failed");
  std::vector<std::complex<double>> roots(es.eigenvalues().data(),
                                          es.eigenvalues().data() + deg);
  return roots;
}

inline double two_layer_f1(double sigma_W, double sigma_Hbar, int K, double lambda_W2,
                           double coupling) {
  const double gap = sigma_W * sigma_Hbar - 1.0;
  return 0.5 * gap * gap + K * 0.5 * lambda_W2 * sigma_W * sigma_W + K * coupling * sigma_Hbar;
}

/// Solves lW2 s^4 - a s + K a^2 = 0 (a = sqrt(n lW1 lH1)) for the stationary sigma_W,
/// then picks the global minimizer of f1 among the positive roots and the zero point.
inline TwoLayerSingularValues two_layer_singular_values(int K, int n, double lambda_W2,
                                                        double lambda_W1, double lambda_H1) {
  if (K < 1 || n < 1 || !(lambda_W2 > 0.0) || !(lambda_W1 > 0.0) || !(lambda_H1 > 0.0))
    throw std::invalid_argument("two_layer_singular_values: inputs must be positive");
  const double a = std::sqrt(n * lambda_W1 * lambda_H1);
  const std::vector<double> coeffs{lambda_W2, 0.0, 0.0, -a, K * a * a};
  auto quartic = [&](double s) { return lambda_W2 * s * s * s * s - a * s + K * a * a; };
  auto dquartic = [&](double s) { return 4.0 * lambda_W2 * s * s * s - a; };

  TwoLayerSingularValues best;  // zero point: f1(0, 0) = 1/2
  for (const auto& z : polynomial_roots(coeffs)) {
    if (std::abs(z.imag()) > 1e-7 * (1.0 + std::abs(z))) continue;
    double s = z.real();
    // Newton polish; eigenvalues carry ~1e-14 relative error.
    for (int it = 0; it < 8; ++it) {
      const double dp = dquartic(s);
      if (dp == 0.0) break;
      const double step = quartic(s) / dp;
      s -= step;
      if (std::abs(step) <= 1e-16 * std::abs(s)) break;
    }
    if (!(s > 0.0)) continue;
    const double sh = lambda_W2 * s * s / a;
    const double f1 = two_layer_f1(s, sh, K, lambda_W2, a);
    if (f1 < best.f1) best = {s, sh, f1, false};
  }
  return best;
}

/// Linear two-layer model. With (sW, sH) from the subproblem:
///   W2* = sW R^T,  W1* = alpha^{1/4} sqrt(sH) R Rt^T,  H1* = alpha^{-1/4} sqrt(sH) Rt (x) 1_n^T,
/// where alpha = n lH1 / lW1.
inline OracleSolution two_layer_linear_minimizer(const ProblemDims& dims, const Hyperparams& hyper,
                                         const Frame& frame_R, const Frame& frame_Rtilde) {
  if (dims.d <= dims.K) throw DimensionError("two_layer_linear_minimizer: requires d > K");
  detail::require_frame(frame_R, dims, "two_layer_linear_minimizer (R)");
  detail::require_frame(frame_Rtilde, dims, "two_layer_linear_minimizer (Rtilde)");
  const auto sv = two_layer_singular_values(dims.K, dims.n, hyper.lambda_W2, hyper.lambda_W1,
                                            hyper.lambda_H1);
  OracleSolution sol;
  sol.sigma_W = sv.sigma_W;
  sol.sigma_Hbar = sv.sigma_Hbar;
  sol.objective_value = sv.f1;
  if (sv.zero_regime) {
    sol.is_zero_solution = true;
    sol.state = TwoLayerState{Matrix::Zero(dims.K, dims.d), Matrix::Zero(dims.d, dims.d),
                              Matrix::Zero(dims.d, dims.N())};
    return sol;
  }
  const double alpha_q = std::pow(dims.n * hyper.lambda_H1 / hyper.lambda_W1, 0.25);
  const double root_h = std::sqrt(sv.sigma_Hbar);
  const Matrix& R = frame_R.matrix();
  const Matrix& Rt = frame_Rtilde.matrix();
  TwoLayerState st;
  st.W2 = sv.sigma_W * R.transpose();
  st.W1 = alpha_q * root_h * R * Rt.transpose();
  st.H1 = kron_ones((root_h / alpha_q) * Rt, dims.n);
  sol.state = std::move(st);
  sol.rho = sv.sigma_Hbar * sv.sigma_Hbar;
  return sol;
}

/// ReLU two-layer model: the linear oracle with R = Rtilde = [I_K; 0], whose
/// post-activation features W1* H1* are entrywise nonnegative.
inline OracleSolution two_layer_relu_minimizer(const ProblemDims& dims, const Hyperparams& hyper) {
  if (dims.d <= dims.K) throw DimensionError("two_layer_relu_minimizer: requires d > K");
  const Frame axis = Frame::axis_aligned(dims.d, dims.K);
  return two_layer_linear_minimizer(dims, hyper, axis, axis);
}

/// W = (1/N) Y H^T ((1/N) H H^T + lW I)^{-1}, via a Cholesky solve of the SPD system.
inline Matrix ridge_weights(const Matrix& H, const Matrix& Y, const ProblemDims& dims,
                            double lambda_W) {
  require_shape(H, dims.d, dims.N(), "ridge_weights: H");
  require_shape(Y, dims.K, dims.N(), "ridge_weights: Y");
  if (!(lambda_W > 0.0)) throw std::invalid_argument("ridge_weights: lambda_W must be positive");
  require_finite(H, "ridge_weights: H");
  const double inv_n = 1.0 / dims.N();
  Matrix A = Matrix::Identity(dims.d, dims.d) * lambda_W;
  A.selfadjointView<Eigen::Lower>().rankUpdate(H, inv_n);
  const Matrix rhs = inv_n * (H * Y.transpose());  // d x K
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success)
    throw NumericalError("ridge_weights: system is not positive definite");
  Matrix Wt = llt.solve(rhs);
  if (!Wt.allFinite()) throw NumericalError("ridge_weights: solve produced non-finite values");
  return Wt.transpose();
}

/// Shrinkage of the ridge weights under i.i.d. feature noise of variance sigma_e^2.
inline double asymptotic_attenuation(double sigma_e, int K, double lambda_H_tilde,
                                     double lambda_W) {
  if (sigma_e < 0.0 || !(lambda_H_tilde > 0.0) || !(lambda_W > 0.0) || K < 1)
    throw std::invalid_argument("asymptotic_attenuation: invalid inputs");
  return 1.0 / (1.0 + sigma_e * sigma_e * K * std::sqrt(lambda_H_tilde / lambda_W));
}

}  // namespace ufm
