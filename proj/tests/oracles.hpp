#pragma once

// Reference computations written independently of the library code paths: explicit
// loops, a different factorization, brute-force scans. Tests compare against these.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <utility>

#include "ufm/models.hpp"

namespace oracle {

using ufm::Matrix;
using ufm::Vector;

/// Loop-based plain objective; lambda_b < 0 means "no bias term".
inline double plain_objective(const Matrix& W, const Matrix& H, const Vector* b, int K, int n,
                              double lW, double lH, double lb) {
  const int N = K * n;
  double loss = 0.0;
  for (int j = 0; j < N; ++j) {
    const int cls = j / n;
    for (int k = 0; k < K; ++k) {
      double z = 0.0;
      for (int i = 0; i < W.cols(); ++i) z += W(k, i) * H(i, j);
      if (b) z += (*b)(k);
      const double r = z - (k == cls ? 1.0 : 0.0);
      loss += r * r;
    }
  }
  double pen = lW * W.squaredNorm() + lH * H.squaredNorm();
  if (b && lb > 0.0) pen += lb * b->squaredNorm();
  return loss / (2.0 * N) + 0.5 * pen;
}

inline double two_layer_objective(const Matrix& W2, const Matrix& W1, const Matrix& H1, int K,
                                  int n, double lW2, double lW1, double lH1, bool relu) {
  const int N = K * n;
  const int d = static_cast<int>(W1.rows());
  double loss = 0.0;
  std::vector<double> h(d);
  for (int j = 0; j < N; ++j) {
    for (int r = 0; r < d; ++r) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) s += W1(r, i) * H1(i, j);
      h[r] = relu ? std::max(s, 0.0) : s;
    }
    for (int k = 0; k < K; ++k) {
      double z = 0.0;
      for (int r = 0; r < d; ++r) z += W2(k, r) * h[r];
      const double e = z - (k == j / n ? 1.0 : 0.0);
      loss += e * e;
    }
  }
  return loss / (2.0 * N) +
         0.5 * (lW2 * W2.squaredNorm() + lW1 * W1.squaredNorm() + lH1 * H1.squaredNorm());
}

/// Central differences, perturbing every entry of every block in place.
inline ufm::ModelState central_differences(const std::function<double(const ufm::ModelState&)>& f,
                                           ufm::ModelState x, double eps = 1e-6) {
  ufm::ModelState g = x;
  auto perturb = [&](Eigen::MatrixXd& blk, Eigen::MatrixXd& out) {
    for (Eigen::Index i = 0; i < blk.size(); ++i) {
      const double saved = blk.data()[i];
      blk.data()[i] = saved + eps;
      const double up = f(x);
      blk.data()[i] = saved - eps;
      const double down = f(x);
      blk.data()[i] = saved;
      out.data()[i] = (up - down) / (2.0 * eps);
    }
  };
  auto perturb_vec = [&](Eigen::VectorXd& blk, Eigen::VectorXd& out) {
    for (Eigen::Index i = 0; i < blk.size(); ++i) {
      const double saved = blk(i);
      blk(i) = saved + eps;
      const double up = f(x);
      blk(i) = saved - eps;
      const double down = f(x);
      blk(i) = saved;
      out(i) = (up - down) / (2.0 * eps);
    }
  };
  if (auto* p = std::get_if<ufm::PlainState>(&x)) {
    auto& gp = std::get<ufm::PlainState>(g);
    perturb(p->W, gp.W);
    perturb(p->H, gp.H);
    if (p->b) perturb_vec(*p->b, *gp.b);
  } else {
    auto& s = std::get<ufm::TwoLayerState>(x);
    auto& gs = std::get<ufm::TwoLayerState>(g);
    perturb(s.W2, gs.W2);
    perturb(s.W1, gs.W1);
    perturb(s.H1, gs.H1);
  }
  return g;
}

/// NC1 via explicit loops and an eigendecomposition-based pseudoinverse of Sigma_B.
inline double nc1(const Matrix& H, int K, int n) {
  const int d = static_cast<int>(H.rows());
  const int N = K * n;
  Matrix means = Matrix::Zero(d, K);
  for (int j = 0; j < N; ++j) means.col(j / n) += H.col(j) / n;
  Vector global = Vector::Zero(d);
  for (int k = 0; k < K; ++k) global += means.col(k) / K;
  Matrix SW = Matrix::Zero(d, d), SB = Matrix::Zero(d, d);
  for (int j = 0; j < N; ++j) {
    const Vector v = H.col(j) - means.col(j / n);
    SW += v * v.transpose() / N;
  }
  for (int k = 0; k < K; ++k) {
    const Vector v = means.col(k) - global;
    SB += v * v.transpose() / K;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(SB);
  const Vector ev = es.eigenvalues();
  const double cutoff = 1e-10 * d * ev.cwiseAbs().maxCoeff();
  Matrix pinv = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i)
    if (ev(i) > cutoff) pinv += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / ev(i);
  return (SW * pinv).trace() / K;
}

/// Minimizes f over [lo, hi]^2: a coarse grid, then repeated zooming around the best cell.
inline std::pair<Eigen::Vector2d, double> scan_min_2d(const std::function<double(double, double)>& f,
                                                      double lo, double hi, int grid = 201,
                                                      int rounds = 40) {
  double x0 = lo, x1 = hi, y0 = lo, y1 = hi;
  Eigen::Vector2d best(lo, lo);
  double best_v = std::numeric_limits<double>::infinity();
  for (int r = 0; r < rounds; ++r) {
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j) {
        const double x = x0 + (x1 - x0) * i / (grid - 1);
        const double y = y0 + (y1 - y0) * j / (grid - 1);
        const double v = f(x, y);
        if (v < best_v) best_v = v, best = {x, y};
      }
    const double hx = 4.0 * (x1 - x0) / (grid - 1), hy = 4.0 * (y1 - y0) / (grid - 1);
    x0 = std::max(lo, best.x() - hx), x1 = std::min(hi, best.x() + hx);
    y0 = std::max(lo, best.y() - hy), y1 = std::min(hi, best.y() + hy);
  }
  return {best, best_v};
}

/// Bias-free plain objective restricted to W = a P^T, H = b P (x) 1^T for orthonormal P.
inline double plain_profile(double a, double b, int K, int n, double lW, double lH) {
  return 0.5 * (a * b - 1.0) * (a * b - 1.0) + 0.5 * lW * K * a * a + 0.5 * lH * K * n * b * b;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix M(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) M(i, j) = nd(rng);
  return M;
}

}  // namespace oracle
