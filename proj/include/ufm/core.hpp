#pragma once

// Dense linear-algebra primitives shared by every part of the library:
// dimension-checked matrices, one-hot label construction, tight-frame
// constructors, SVD-based pseudoinverse and nuclear norm.
//
// Matrices are Eigen::MatrixXd (column-major, 64-bit). Columns of feature
// matrices are always in class-major order: column k*n + i holds sample i of
// class k, so that the label matrix is Y = I_K (x) 1_n^T.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ufm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown when operand shapes do not agree with each other or with ProblemDims.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a factorization fails or an input contains NaN/Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProblemDims {
  int K = 0;  // classes
  int d = 0;  // feature dimension
  int n = 0;  // samples per class

  ProblemDims() = default;
  ProblemDims(int classes, int feature_dim, int per_class)
      : K(classes), d(feature_dim), n(per_class) {
    if (K < 1 || d < 1 || n < 1)
      throw DimensionError("ProblemDims: K, d, n must be positive (got K=" + std::to_string(K) +
                           ", d=" + std::to_string(d) + ", n=" + std::to_string(n) + ")");
  }

  int N() const { return K * n; }

  friend bool operator==(const ProblemDims&, const ProblemDims&) = default;
};

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

template <typename Derived>
void require_shape(const Eigen::MatrixBase<Derived>& m, Eigen::Index rows, Eigen::Index cols,
                   const char* what) {
  if (m.rows() != rows || m.cols() != cols)
    throw DimensionError(std::string(what) + ": expected " + detail::shape_str(rows, cols) +
                         ", got " + detail::shape_str(m.rows(), m.cols()));
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + ": non-finite entries");
}

/// Y = I_K (x) 1_n^T, shape K x N.
inline Matrix build_label_matrix(const ProblemDims& dims) {
  Matrix Y = Matrix::Zero(dims.K, dims.N());
  for (int k = 0; k < dims.K; ++k) Y.row(k).segment(k * dims.n, dims.n).setOnes();
  return Y;
}

/// Replicates every column of `means` n times: Hbar (x) 1_n^T.
inline Matrix kron_ones(const Matrix& means, int n) {
  Matrix out(means.rows(), means.cols() * n);
  for (Eigen::Index k = 0; k < means.cols(); ++k)
    out.middleCols(k * n, n) = means.col(k).replicate(1, n);
  return out;
}

/// A d x K matrix with orthonormal columns.
class Frame {
 public:
  static constexpr double kTolerance = 1e-12;

  explicit Frame(Matrix P) : P_(std::move(P)) {
    if (P_.rows() < P_.cols())
      throw DimensionError("Frame: needs d >= K, got " + detail::shape_str(P_.rows(), P_.cols()));
    require_finite(P_, "Frame");
    const double err = (P_.transpose() * P_ - Matrix::Identity(P_.cols(), P_.cols())).norm();
    if (err > kTolerance)
      throw NumericalError("Frame: columns not orthonormal (||P^T P - I||_F = " +
                           std::to_string(err) + ")");
  }

  /// [I_K; 0] embedded in R^{d x K}.
  static Frame axis_aligned(int d, int K) {
    if (d < K) throw DimensionError("Frame::axis_aligned: d < K");
    Matrix P = Matrix::Zero(d, K);
    P.topRows(K).setIdentity();
    return Frame(std::move(P));
  }

  const Matrix& matrix() const { return P_; }
  int d() const { return static_cast<int>(P_.rows()); }
  int K() const { return static_cast<int>(P_.cols()); }

 private:
  Matrix P_;
};

/// sqrt(K/(K-1)) (I_K - 11^T/K); columns have unit norm and pairwise cosine -1/(K-1).
inline Matrix standard_simplex_etf(int K) {
  if (K < 2) throw DimensionError("standard_simplex_etf: K must be >= 2");
  const double scale = std::sqrt(static_cast<double>(K) / (K - 1));
  Matrix centered = Matrix::Identity(K, K) - Matrix::Constant(K, K, 1.0 / K);
  return scale * centered;
}

/// P * M_std for an orthonormal d x K frame P.
inline Matrix general_simplex_etf(int K, int d, const Frame& frame) {
  if (d < K) throw DimensionError("general_simplex_etf: d < K");
  if (frame.d() != d || frame.K() != K)
    throw DimensionError("general_simplex_etf: frame is " + detail::shape_str(frame.d(), frame.K()) +
                         ", expected " + detail::shape_str(d, K));
  return frame.matrix() * standard_simplex_etf(K);
}

/// Orthonormalizes K i.i.d. standard-normal columns of length d (Householder QR).
/// Draws are taken column by column from a mt19937_64 seeded with `seed`.
/// Column signs are fixed so that R has a positive diagonal, making the result
/// a deterministic function of the Gaussian sample.
inline Frame random_orthonormal(int d, int K, std::uint64_t seed) {
  if (d < K) throw DimensionError("random_orthonormal: d < K");
  if (K < 1) throw DimensionError("random_orthonormal: K must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix G(d, K);
  for (int j = 0; j < K; ++j)
    for (int i = 0; i < d; ++i) G(i, j) = normal(rng);

  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ() * Matrix::Identity(d, K);
  const Matrix R = qr.matrixQR().topRows(K).triangularView<Eigen::Upper>();
  for (int j = 0; j < K; ++j)
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  // One Gram-Schmidt pass against rounding drift, keeps ||Q^T Q - I|| ~ 1e-16.
  for (int j = 0; j < K; ++j) {
    for (int i = 0; i < j; ++i) Q.col(j) -= Q.col(i).dot(Q.col(j)) * Q.col(i);
    Q.col(j).normalize();
  }
  return Frame(std::move(Q));
}

inline double default_pinv_rtol(const Matrix& M) {
  return 1e-10 * static_cast<double>(std::max(M.rows(), M.cols()));
}

/// Moore-Penrose pseudoinverse via SVD. Singular values at or below
/// rtol * sigma_max are treated as zero.
inline Matrix pseudoinverse(const Matrix& M, double rtol) {
  require_finite(M, "pseudoinverse");
  if (M.size() == 0) return Matrix(M.cols(), M.rows());
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("pseudoinverse: SVD did not converge");
  const Vector& s = svd.singularValues();
  const double cutoff = rtol * (s.size() > 0 ? s(0) : 0.0);
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff && s(i) > 0.0) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline Matrix pseudoinverse(const Matrix& M) { return pseudoinverse(M, default_pinv_rtol(M)); }

inline Vector singular_values(const Matrix& M) {
  require_finite(M, "singular_values");
  if (M.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(M);
  if (svd.info() != Eigen::Success) throw NumericalError("singular_values: SVD did not converge");
  return svd.singularValues();
}

/// Sum of singular values.
inline double nuclear_norm(const Matrix& M) { return singular_values(M).sum(); }

}  // namespace ufm
