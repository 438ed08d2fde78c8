#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ufm/models.hpp"

using namespace ufm;

namespace {

const ProblemDims kDims(3, 5, 4);

Hyperparams hyper_for(ModelVariant v) {
  Hyperparams h;
  h.lambda_W = 0.03;
  h.lambda_H = 0.02;
  h.lambda_W2 = 0.04;
  h.lambda_W1 = 0.025;
  h.lambda_H1 = 0.015;
  if (v == ModelVariant::PlainUnregBias) h.bias = BiasMode::unregularized();
  if (v == ModelVariant::PlainRegBias) h.bias = BiasMode::regularized(0.05);
  return h;
}

ModelState random_state(ModelVariant v, std::mt19937_64& rng) {
  if (is_plain(v)) {
    PlainState s{oracle::random_matrix(kDims.K, kDims.d, rng), oracle::random_matrix(kDims.d, kDims.N(), rng),
                 std::nullopt};
    if (v != ModelVariant::PlainBiasFree) s.b = oracle::random_matrix(kDims.K, 1, rng);
    return s;
  }
  return TwoLayerState{oracle::random_matrix(kDims.K, kDims.d, rng),
                       oracle::random_matrix(kDims.d, kDims.d, rng),
                       oracle::random_matrix(kDims.d, kDims.N(), rng)};
}

double naive_objective(const ModelState& s, const Hyperparams& h, Activation act) {
  if (const auto* p = std::get_if<PlainState>(&s))
    return oracle::plain_objective(p->W, p->H, p->b ? &*p->b : nullptr, kDims.K, kDims.n, h.lambda_W,
                                   h.lambda_H, h.bias.penalty());
  const auto& t = std::get<TwoLayerState>(s);
  return oracle::two_layer_objective(t.W2, t.W1, t.H1, kDims.K, kDims.n, h.lambda_W2, h.lambda_W1,
                                     h.lambda_H1, act == Activation::ReLU);
}

const ModelVariant kAllVariants[] = {ModelVariant::PlainBiasFree, ModelVariant::PlainUnregBias,
                                     ModelVariant::PlainRegBias, ModelVariant::TwoLayerLinear,
                                     ModelVariant::TwoLayerReLU};

}  // namespace

TEST(Objective, MatchesLoopImplementationForEveryVariant) {
  std::mt19937_64 rng(1);
  const Matrix Y = build_label_matrix(kDims);
  for (auto v : kAllVariants) {
    for (int t = 0; t < 5; ++t) {
      const auto s = random_state(v, rng);
      const auto h = hyper_for(v);
      const double lib = evaluate(s, Y, kDims, h, activation_of(v)).objective;
      EXPECT_NEAR(lib, naive_objective(s, h, activation_of(v)), 1e-12 * (1.0 + lib)) << variant_name(v);
    }
  }
}

TEST(Gradient, AgreesWithCentralDifferences) {
  std::mt19937_64 rng(2);
  const Matrix Y = build_label_matrix(kDims);
  for (auto v : kAllVariants) {
    const auto h = hyper_for(v);
    const auto act = activation_of(v);
    for (int t = 0; t < 20; ++t) {
      auto s = random_state(v, rng);
      if (act == Activation::ReLU) {
        // Away from kinks so that eps-perturbations keep the activation pattern.
        while (forward_two_layer(std::get<TwoLayerState>(s), act).pre.cwiseAbs().minCoeff() < 1e-3)
          s = random_state(v, rng);
      }
      const auto analytic = evaluate(s, Y, kDims, h, act).gradient;
      const auto fd = oracle::central_differences(
          [&](const ModelState& x) { return naive_objective(x, h, act); }, s);
      const double err = (flatten(analytic) - flatten(fd)).norm() / flatten(analytic).norm();
      EXPECT_LE(err, 1e-6) << variant_name(v) << " trial " << t;
    }
  }
}

TEST(Gradient, LibraryFiniteDifferenceHelperMatchesOracle) {
  std::mt19937_64 rng(3);
  const Matrix Y = build_label_matrix(kDims);
  const auto h = hyper_for(ModelVariant::PlainRegBias);
  const auto s = random_state(ModelVariant::PlainRegBias, rng);
  auto f = [&](const ModelState& x) { return evaluate(x, Y, kDims, h, Activation::Linear).objective; };
  const Vector lib = flatten(finite_diff_gradient(f, s));
  const Vector ref = flatten(oracle::central_differences(f, s));
  EXPECT_LE((lib - ref).norm(), 1e-9 * ref.norm());
}

TEST(Gradient, ReluSubgradientIsZeroAtKink) {
  const ProblemDims dims(2, 3, 1);
  TwoLayerState s{Matrix::Ones(2, 3), Matrix::Zero(3, 3), Matrix::Ones(3, 2)};
  Hyperparams h;
  const auto r = eval_two_layer(s, build_label_matrix(dims), dims, h, Activation::ReLU);
  EXPECT_EQ(r.gradient.W1.norm(), 0.0);
  EXPECT_EQ(r.gradient.H1.norm(), 0.0);
}

TEST(OptimalBias, ZeroesTheUnregularizedBiasGradient) {
  std::mt19937_64 rng(4);
  const Matrix Y = build_label_matrix(kDims);
  const auto h = hyper_for(ModelVariant::PlainUnregBias);
  for (int t = 0; t < 10; ++t) {
    auto s = std::get<PlainState>(random_state(ModelVariant::PlainUnregBias, rng));
    s.b = optimal_bias(s.W, s.H, Y, kDims);
    const auto r = eval_plain(s, Y, kDims, h);
    EXPECT_LE(r.gradient.b->norm(), 1e-14);
    // Any other bias is worse.
    auto other = s;
    *other.b += Vector::Constant(kDims.K, 1e-3);
    EXPECT_GT(eval_plain(other, Y, kDims, h).objective, r.objective);
  }
}

TEST(Shapes, MismatchesThrowDimensionError) {
  const Matrix Y = build_label_matrix(kDims);
  Hyperparams h = hyper_for(ModelVariant::PlainBiasFree);
  PlainState s{Matrix::Zero(kDims.K, kDims.d + 1), Matrix::Zero(kDims.d, kDims.N()), std::nullopt};
  EXPECT_THROW(eval_plain(s, Y, kDims, h), DimensionError);
  s.W = Matrix::Zero(kDims.K, kDims.d);
  s.b = Vector::Zero(kDims.K);
  EXPECT_THROW(eval_plain(s, Y, kDims, h), DimensionError);  // bias on a bias-free model
  TwoLayerState t{Matrix::Zero(kDims.K, kDims.d), Matrix::Zero(kDims.d, kDims.d + 1),
                  Matrix::Zero(kDims.d, kDims.N())};
  EXPECT_THROW(eval_two_layer(t, Y, kDims, h, Activation::Linear), DimensionError);
}

TEST(Shapes, NonFiniteParametersThrow) {
  const Matrix Y = build_label_matrix(kDims);
  PlainState s{Matrix::Zero(kDims.K, kDims.d), Matrix::Zero(kDims.d, kDims.N()), std::nullopt};
  s.H(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(eval_plain(s, Y, kDims, hyper_for(ModelVariant::PlainBiasFree)), NumericalError);
}

TEST(Flatten, RoundTripsEveryBlock) {
  std::mt19937_64 rng(6);
  for (auto v : kAllVariants) {
    const auto s = random_state(v, rng);
    const Vector x = flatten(s);
    EXPECT_EQ(x.size(), parameter_count(s));
    EXPECT_EQ(flatten(unflatten(s, x)), x);
    EXPECT_NEAR(x.squaredNorm(), squared_norm(s), 1e-10);
  }
}

TEST(Variants, NamesRoundTrip) {
  for (auto v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_FALSE(parse_variant("plain"));
}
