#pragma once

// Objectives and analytic gradients for the unconstrained-features models:
//
//   plain      1/(2N) ||W H + b 1^T - Y||^2 + lW/2 ||W||^2 + lH/2 ||H||^2 + lb/2 ||b||^2
//   two-layer  1/(2N) ||W2 act(W1 H1) - Y||^2 + lW2/2 ||W2||^2 + lW1/2 ||W1||^2 + lH1/2 ||H1||^2
//
// with act = identity or elementwise ReLU, and N = K n.

#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>

#include "ufm/core.hpp"

namespace ufm {

enum class BiasKind { BiasFree, UnregularizedBias, RegularizedBias };

struct BiasMode {
  BiasKind kind = BiasKind::BiasFree;
  double lambda_b = 0.0;  // read only for RegularizedBias

  static BiasMode bias_free() { return {BiasKind::BiasFree, 0.0}; }
  static BiasMode unregularized() { return {BiasKind::UnregularizedBias, 0.0}; }
  static BiasMode regularized(double lambda_b) { return {BiasKind::RegularizedBias, lambda_b}; }

  bool has_bias() const { return kind != BiasKind::BiasFree; }
  double penalty() const { return kind == BiasKind::RegularizedBias ? lambda_b : 0.0; }
};

struct Hyperparams {
  double lambda_W = 0.0;
  double lambda_H = 0.0;
  double lambda_W2 = 0.0;
  double lambda_W1 = 0.0;
  double lambda_H1 = 0.0;
  BiasMode bias;
};

enum class Activation { Linear, ReLU };

/// The five model configurations: three bias treatments of the plain model and
/// the two-layer model with either activation.
enum class ModelVariant { PlainBiasFree, PlainUnregBias, PlainRegBias, TwoLayerLinear, TwoLayerReLU };

inline bool is_plain(ModelVariant v) {
  return v == ModelVariant::PlainBiasFree || v == ModelVariant::PlainUnregBias ||
         v == ModelVariant::PlainRegBias;
}

inline Activation activation_of(ModelVariant v) {
  return v == ModelVariant::TwoLayerReLU ? Activation::ReLU : Activation::Linear;
}

inline const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::PlainBiasFree: return "plain_bias_free";
    case ModelVariant::PlainUnregBias: return "plain_unreg_bias";
    case ModelVariant::PlainRegBias: return "plain_reg_bias";
    case ModelVariant::TwoLayerLinear: return "two_layer_linear";
    case ModelVariant::TwoLayerReLU: return "two_layer_relu";
  }
  return "unknown";
}

inline std::optional<ModelVariant> parse_variant(const std::string& name) {
  for (auto v : {ModelVariant::PlainBiasFree, ModelVariant::PlainUnregBias,
                 ModelVariant::PlainRegBias, ModelVariant::TwoLayerLinear,
                 ModelVariant::TwoLayerReLU})
    if (name == variant_name(v)) return v;
  return std::nullopt;
}

struct PlainState {
  Matrix W;                 // K x d
  Matrix H;                 // d x N
  std::optional<Vector> b;  // K, absent for BiasFree
};

struct TwoLayerState {
  Matrix W2;  // K x d
  Matrix W1;  // d x d
  Matrix H1;  // d x N
};

/// Optimization variables of one model; gradients use the same shape.
using ModelState = std::variant<PlainState, TwoLayerState>;

template <typename State>
struct EvalResult {
  double objective = 0.0;
  State gradient;
};

// ---- block iteration -------------------------------------------------------

/// Calls f(block) for every parameter block in storage order (W, H, b or W2, W1, H1).
template <typename F>
void for_each_block(PlainState& s, F&& f) {
  f(s.W);
  f(s.H);
  if (s.b) f(*s.b);
}
template <typename F>
void for_each_block(const PlainState& s, F&& f) {
  f(s.W);
  f(s.H);
  if (s.b) f(*s.b);
}
template <typename F>
void for_each_block(TwoLayerState& s, F&& f) {
  f(s.W2);
  f(s.W1);
  f(s.H1);
}
template <typename F>
void for_each_block(const TwoLayerState& s, F&& f) {
  f(s.W2);
  f(s.W1);
  f(s.H1);
}
template <typename F>
void for_each_block(ModelState& s, F&& f) {
  std::visit([&](auto& st) { for_each_block(st, f); }, s);
}
template <typename F>
void for_each_block(const ModelState& s, F&& f) {
  std::visit([&](const auto& st) { for_each_block(st, f); }, s);
}

inline Eigen::Index parameter_count(const ModelState& s) {
  Eigen::Index count = 0;
  for_each_block(s, [&](const auto& m) { count += m.size(); });
  return count;
}

/// Concatenation of every block's entries (column-major) in storage order.
inline Vector flatten(const ModelState& s) {
  Vector out(parameter_count(s));
  Eigen::Index pos = 0;
  for_each_block(s, [&](const auto& m) {
    out.segment(pos, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    pos += m.size();
  });
  return out;
}

/// Inverse of flatten; `shape` supplies block shapes.
inline ModelState unflatten(const ModelState& shape, const Vector& values) {
  if (values.size() != parameter_count(shape))
    throw DimensionError("unflatten: length mismatch");
  ModelState out = shape;
  Eigen::Index pos = 0;
  for_each_block(out, [&](auto& m) {
    Eigen::Map<Vector>(m.data(), m.size()) = values.segment(pos, m.size());
    pos += m.size();
  });
  return out;
}

inline double squared_norm(const ModelState& s) {
  double total = 0.0;
  for_each_block(s, [&](const auto& m) { total += m.squaredNorm(); });
  return total;
}

inline bool all_finite(const ModelState& s) {
  bool ok = true;
  for_each_block(s, [&](const auto& m) { ok = ok && m.allFinite(); });
  return ok;
}

/// x <- x - step * g, blockwise.
inline void axpy_step(PlainState& x, const PlainState& g, double step) {
  x.W -= step * g.W;
  x.H -= step * g.H;
  if (x.b.has_value() != g.b.has_value()) throw DimensionError("axpy_step: bias presence differs");
  if (x.b) *x.b -= step * *g.b;
}

inline void axpy_step(TwoLayerState& x, const TwoLayerState& g, double step) {
  x.W2 -= step * g.W2;
  x.W1 -= step * g.W1;
  x.H1 -= step * g.H1;
}

inline void axpy_step(ModelState& x, const ModelState& g, double step) {
  if (x.index() != g.index()) throw DimensionError("axpy_step: state/gradient kinds differ");
  std::visit(
      [&](auto& xs) {
        using S = std::decay_t<decltype(xs)>;
        axpy_step(xs, std::get<S>(g), step);
      },
      x);
}

// ---- shape checks ----------------------------------------------------------

inline void check_plain(const PlainState& s, const Matrix& Y, const ProblemDims& dims,
                        const BiasMode& bias) {
  require_shape(s.W, dims.K, dims.d, "W");
  require_shape(s.H, dims.d, dims.N(), "H");
  require_shape(Y, dims.K, dims.N(), "Y");
  if (bias.has_bias() != s.b.has_value())
    throw DimensionError(bias.has_bias() ? "bias mode requires b" : "bias-free model carries b");
  if (s.b) require_shape(*s.b, dims.K, 1, "b");
  require_finite(s.W, "W");
  require_finite(s.H, "H");
  if (s.b) require_finite(*s.b, "b");
}

inline void check_two_layer(const TwoLayerState& s, const Matrix& Y, const ProblemDims& dims) {
  require_shape(s.W2, dims.K, dims.d, "W2");
  require_shape(s.W1, dims.d, dims.d, "W1");
  require_shape(s.H1, dims.d, dims.N(), "H1");
  require_shape(Y, dims.K, dims.N(), "Y");
  require_finite(s.W2, "W2");
  require_finite(s.W1, "W1");
  require_finite(s.H1, "H1");
}

// ---- objectives ------------------------------------------------------------

inline EvalResult<PlainState> eval_plain(const PlainState& s, const Matrix& Y,
                                         const ProblemDims& dims, const Hyperparams& hyper) {
  check_plain(s, Y, dims, hyper.bias);
  const double inv_n = 1.0 / dims.N();

  Matrix residual = s.W * s.H - Y;
  if (s.b) residual.colwise() += *s.b;

  EvalResult<PlainState> out;
  out.objective = 0.5 * inv_n * residual.squaredNorm() + 0.5 * hyper.lambda_W * s.W.squaredNorm() +
                  0.5 * hyper.lambda_H * s.H.squaredNorm();
  residual *= inv_n;
  out.gradient.W = residual * s.H.transpose() + hyper.lambda_W * s.W;
  out.gradient.H = s.W.transpose() * residual + hyper.lambda_H * s.H;
  if (s.b) {
    const double lb = hyper.bias.penalty();
    out.objective += 0.5 * lb * s.b->squaredNorm();
    out.gradient.b = residual.rowwise().sum() + lb * *s.b;
  }
  return out;
}

/// b* = (1/N)(Y - W H) 1_N, the minimizer over an unregularized bias.
inline Vector optimal_bias(const Matrix& W, const Matrix& H, const Matrix& Y,
                           const ProblemDims& dims) {
  require_shape(W, dims.K, dims.d, "W");
  require_shape(H, dims.d, dims.N(), "H");
  require_shape(Y, dims.K, dims.N(), "Y");
  // (Y - WH) 1 = Y 1 - W (H 1)
  const Vector h_sum = H.rowwise().sum();
  return (Y.rowwise().sum() - W * h_sum) / static_cast<double>(dims.N());
}

/// Forward activations of the two-layer model, shared by the objective and metrics.
struct TwoLayerForward {
  Matrix pre;   // W1 H1
  Matrix post;  // act(W1 H1)
};

inline TwoLayerForward forward_two_layer(const TwoLayerState& s, Activation act) {
  TwoLayerForward f;
  f.pre = s.W1 * s.H1;
  f.post = act == Activation::ReLU ? Matrix(f.pre.cwiseMax(0.0)) : f.pre;
  return f;
}

inline EvalResult<TwoLayerState> eval_two_layer(const TwoLayerState& s, const Matrix& Y,
                                                const ProblemDims& dims, const Hyperparams& hyper,
                                                Activation act) {
  check_two_layer(s, Y, dims);
  const double inv_n = 1.0 / dims.N();
  const TwoLayerForward f = forward_two_layer(s, act);

  Matrix residual = s.W2 * f.post - Y;
  EvalResult<TwoLayerState> out;
  out.objective = 0.5 * inv_n * residual.squaredNorm() +
                  0.5 * hyper.lambda_W2 * s.W2.squaredNorm() +
                  0.5 * hyper.lambda_W1 * s.W1.squaredNorm() +
                  0.5 * hyper.lambda_H1 * s.H1.squaredNorm();
  residual *= inv_n;
  out.gradient.W2 = residual * f.post.transpose() + hyper.lambda_W2 * s.W2;
  Matrix back = s.W2.transpose() * residual;
  if (act == Activation::ReLU)  // subgradient 0 at the kink
    back = (f.pre.array() > 0.0).select(back, 0.0);
  out.gradient.W1 = back * s.H1.transpose() + hyper.lambda_W1 * s.W1;
  out.gradient.H1 = s.W1.transpose() * back + hyper.lambda_H1 * s.H1;
  return out;
}

/// Dispatches on the state kind; `act` is ignored for plain states.
inline EvalResult<ModelState> evaluate(const ModelState& s, const Matrix& Y,
                                       const ProblemDims& dims, const Hyperparams& hyper,
                                       Activation act) {
  if (const auto* p = std::get_if<PlainState>(&s)) {
    auto r = eval_plain(*p, Y, dims, hyper);
    return {r.objective, std::move(r.gradient)};
  }
  auto r = eval_two_layer(std::get<TwoLayerState>(s), Y, dims, hyper, act);
  return {r.objective, std::move(r.gradient)};
}

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
inline ModelState finite_diff_gradient(const std::function<double(const ModelState&)>& objective,
                                       const ModelState& state, double eps = 1e-6) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_gradient: eps must be positive");
  Vector x = flatten(state);
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x(i);
    x(i) = saved + eps;
    const double up = objective(unflatten(state, x));
    x(i) = saved - eps;
    const double down = objective(unflatten(state, x));
    x(i) = saved;
    g(i) = (up - down) / (2.0 * eps);
  }
  return unflatten(state, g);
}

}  // namespace ufm
