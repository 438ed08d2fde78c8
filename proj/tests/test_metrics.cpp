#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ufm/analytic.hpp"
#include "ufm/metrics.hpp"
#include "ufm/optim.hpp"

using namespace ufm;

namespace {

Matrix random_rotation(int d, std::uint64_t seed) { return random_orthonormal(d, d, seed).matrix(); }

}  // namespace

TEST(Nc1, HandComputedScalarExample) {
  Matrix H(1, 4);
  H << 0, 2, 4, 8;
  const auto v = nc1(H, ProblemDims(2, 1, 2));
  EXPECT_FALSE(v.degenerate);
  EXPECT_NEAR(v.value, 0.2, 1e-15);
}

TEST(Nc1, MatchesLoopOracleOnRandomFeatures) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const ProblemDims dims(2 + t % 4, 3 + t % 6, 2 + t % 5);
    const Matrix H = oracle::random_matrix(dims.d, dims.N(), rng);
    const double ref = oracle::nc1(H, dims.K, dims.n);
    EXPECT_NEAR(nc1(H, dims).value, ref, 1e-10 * (1.0 + ref)) << "trial " << t;
  }
}

TEST(Nc1, ZeroOnExactlyCollapsedFeatures) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 20; ++t) {
    const ProblemDims dims(2 + t % 5, 6, 3 + t % 4);
    const Matrix H = kron_ones(oracle::random_matrix(dims.d, dims.K, rng), dims.n);
    const auto v = nc1(H, dims);
    EXPECT_FALSE(v.degenerate);
    EXPECT_EQ(v.value, 0.0);
  }
}

TEST(Nc1, InvariantUnderRotationAndScaling) {
  std::mt19937_64 rng(23);
  const ProblemDims dims(4, 7, 5);
  for (int t = 0; t < 10; ++t) {
    const Matrix H = oracle::random_matrix(dims.d, dims.N(), rng);
    const double base = nc1(H, dims).value;
    EXPECT_NEAR(nc1(random_rotation(7, t) * H, dims).value, base, 1e-9 * base);
    EXPECT_NEAR(nc1(3.7 * H, dims).value, base, 1e-9 * base);
  }
}

TEST(Nc1, ZeroBetweenClassScatterIsFlagged) {
  const ProblemDims dims(3, 4, 2);
  const auto v = nc1(Matrix::Ones(4, 6), dims);
  EXPECT_TRUE(v.degenerate);
  EXPECT_EQ(v.value, 0.0);
}

TEST(Nc2, ZeroOnScaledOrthogonalFrames) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix P = random_orthonormal(12, 5, seed).matrix();
    EXPECT_LE(nc2_of(P).value, 1e-15);
    EXPECT_LE(nc2_of(0.37 * P).value, 1e-15);
  }
  EXPECT_EQ(nc2_of(Matrix::Identity(4, 4) * 2.0).value, 0.0);
}

TEST(Nc2, EtfZeroOnSimplexEtfs) {
  for (int K : {2, 3, 5, 8}) {
    const Matrix M = general_simplex_etf(K, 10, random_orthonormal(10, K, K));
    EXPECT_LE(nc2_etf(M).value, 1e-14) << K;
    EXPECT_LE(nc2_etf(4.2 * M).value, 1e-14) << K;
  }
}

TEST(Nc2, CenteredOrthogonalFrameIsASimplexEtf) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix P = 1.7 * random_orthonormal(9, 4, seed).matrix();
    EXPECT_LE(nc2_etf(P, /*center=*/true).value, 1e-10);
    EXPECT_GT(nc2_etf(P, /*center=*/false).value, 0.1);
  }
}

TEST(Nc2, InvariantUnderRotation) {
  std::mt19937_64 rng(24);
  for (int t = 0; t < 10; ++t) {
    const Matrix Hbar = oracle::random_matrix(8, 4, rng);
    const Matrix Q = random_rotation(8, 100 + t);
    EXPECT_NEAR(nc2_of(Q * Hbar).value, nc2_of(Hbar).value, 1e-13);
    EXPECT_NEAR(nc2_etf(Q * Hbar).value, nc2_etf(Hbar).value, 1e-13);
  }
}

TEST(Nc2, ZeroMeansAreFlagged) {
  const auto v = nc2_of(Matrix::Zero(5, 3));
  EXPECT_TRUE(v.degenerate);
  EXPECT_NEAR(v.value, 1.0, 1e-15);  // ||I/sqrt(K)||_F
}

TEST(Nc3, ExactPositiveScaleInvariance) {
  std::mt19937_64 rng(25);
  for (int t = 0; t < 10; ++t) {
    const Matrix W = oracle::random_matrix(4, 9, rng);
    const Matrix Hbar = oracle::random_matrix(9, 4, rng);
    const double base = nc3(W, Hbar).value;
    EXPECT_EQ(nc3(4.0 * W, 0.125 * Hbar).value, base);
    EXPECT_NEAR(nc3(3.3 * W, 0.7 * Hbar).value, base, 1e-15);
  }
}

TEST(Nc3, ZeroWhenWeightsAreScaledMeans) {
  std::mt19937_64 rng(26);
  const Matrix Hbar = oracle::random_matrix(9, 4, rng);
  EXPECT_LE(nc3(2.5 * Hbar.transpose(), Hbar).value, 1e-15);
}

TEST(Nc3, DegenerateAndShapeErrors) {
  const auto v = nc3(Matrix::Zero(3, 5), Matrix::Ones(5, 3));
  EXPECT_TRUE(v.degenerate);
  EXPECT_EQ(v.value, 2.0);
  EXPECT_THROW(nc3(Matrix::Ones(3, 4), Matrix::Ones(5, 3)), DimensionError);
}

TEST(Report, LevelNamesPerVariant) {
  const ProblemDims dims(3, 5, 2);
  InitSpec init;
  init.seed = 1;
  const auto names = [&](ModelVariant v) {
    std::vector<std::string> out;
    for (const auto& l : nc_report(init_state(v, dims, init), dims, activation_of(v)).levels)
      out.push_back(l.name);
    return out;
  };
  EXPECT_EQ(names(ModelVariant::PlainBiasFree), (std::vector<std::string>{"h"}));
  EXPECT_EQ(names(ModelVariant::TwoLayerLinear), (std::vector<std::string>{"h1", "h2"}));
  EXPECT_EQ(names(ModelVariant::TwoLayerReLU), (std::vector<std::string>{"h1", "pre", "post"}));
}

TEST(Report, ImportedFeaturesWithAndWithoutWeights) {
  const ProblemDims dims(4, 20, 50);
  const auto sol = bias_free_minimizer(dims, 0.005, 0.005, random_orthonormal(20, 4, 0));
  const auto& s = std::get<PlainState>(sol.state);
  const auto with = nc_report_features(s.H, dims, s.W);
  EXPECT_LE(with.top().nc1, 1e-9);
  EXPECT_LE(with.top().nc2_of, 1e-9);
  EXPECT_LE(*with.nc3, 1e-9);
  EXPECT_FALSE(nc_report_features(s.H, dims, std::nullopt).nc3.has_value());
}

TEST(LinearLink, OrthogonalW1PreservesNc1) {
  // Reported diagnostic: with orthogonal W1 the two feature levels share NC1; with a
  // generic Gaussian W1 the values differ.
  const ProblemDims dims(4, 20, 50);
  InitSpec init;
  init.scale = 0.1;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    init.seed = seed;
    auto s = std::get<TwoLayerState>(init_state(ModelVariant::TwoLayerLinear, dims, init));
    const double generic_h1 = nc1(s.H1, dims).value;
    const double generic_h2 = nc1(s.W1 * s.H1, dims).value;
    s.W1 = random_rotation(20, seed);
    const double h1 = nc1(s.H1, dims).value;
    const double h2 = nc1(s.W1 * s.H1, dims).value;
    EXPECT_NEAR(h1, h2, 1e-8);
    RecordProperty("generic_w1_nc1_h1_seed" + std::to_string(seed), std::to_string(generic_h1));
    RecordProperty("generic_w1_nc1_h2_seed" + std::to_string(seed), std::to_string(generic_h2));
  }
}
