#pragma once

// Structured linear algebra used throughout the model: Kronecker products,
// compound-symmetric (exchangeable) correlation matrices with closed-form
// inverse/determinant, and the trace factorization for Kronecker quadratics.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "lowfr/errors.hpp"

namespace lowfr {

// Row-major storage so flat (row, col) -> row * cols + col indexing in tests
// and file output matches the in-memory layout.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

namespace detail {
using MapMat = Eigen::Map<const Mat>;
using MapMutMat = Eigen::Map<Mat>;
}  // namespace detail

// Dense Kronecker product, a (r x c) blocks scaled by entries of A.
inline Mat kron(const Mat& A, const Mat& B) {
  const std::int64_t rows = std::int64_t(A.rows()) * B.rows();
  const std::int64_t cols = std::int64_t(A.cols()) * B.cols();
  if (rows * cols > std::int64_t(1) << 28)
    throw UsageError("kron: result would have " + std::to_string(rows * cols) +
                     " entries; refusing");
  Mat out(rows, cols);
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

// Correlation matrix with unit diagonal and a single off-diagonal value phi:
//   Phi = (1 - phi) I + phi J.
// Positive definite iff -1/(dim-1) < phi < 1, which is enforced at
// construction so every instance has a valid closed-form inverse
//   Phi^{-1} = 1/(1-phi) [ I - phi/(1 + (dim-1) phi) J ]
// and determinant (1-phi)^{dim-1} (1 + (dim-1) phi).
class CompoundSymmetric {
 public:
  CompoundSymmetric(int dim, double phi) : dim_(dim), phi_(phi) {
    if (dim < 1) throw UsageError("CompoundSymmetric: dim must be >= 1");
    if (dim > 1) {
      const double lo = -1.0 / (dim - 1);
      if (!(phi > lo && phi < 1.0))
        throw DomainError("CompoundSymmetric: phi = " + std::to_string(phi) +
                          " outside (" + std::to_string(lo) + ", 1) for dim " +
                          std::to_string(dim));
    }
  }

  int dim() const { return dim_; }
  double phi() const { return phi_; }

  Mat dense() const {
    Mat m = Mat::Constant(dim_, dim_, phi_);
    m.diagonal().setOnes();
    return m;
  }

  Mat inverse() const {
    if (dim_ == 1) return Mat::Identity(1, 1);
    const double a = 1.0 / (1.0 - phi_);
    const double b = phi_ / (1.0 + (dim_ - 1) * phi_);
    Mat m = Mat::Constant(dim_, dim_, -a * b);
    m.diagonal().array() = a * (1.0 - b);
    return m;
  }

  double log_det() const {
    if (dim_ == 1) return 0.0;
    return (dim_ - 1) * std::log(1.0 - phi_) + std::log(1.0 + (dim_ - 1) * phi_);
  }

  // tr(Phi) = dim, tr(Phi M) etc. come up often enough to matter; the two
  // scalars below are the only ones the model needs.
  double trace() const { return dim_; }

  // Lower Cholesky factor, used by the simulators.
  Mat cholesky() const {
    Eigen::LLT<Mat> llt(dense());
    if (llt.info() != Eigen::Success)
      throw DomainError("CompoundSymmetric: Cholesky failed");
    return llt.matrixL();
  }

 private:
  int dim_;
  double phi_;
};

// Closed-form inverse of a compound-symmetric correlation matrix.
inline Mat cs_inverse(int dim, double phi) {
  return CompoundSymmetric(dim, phi).inverse();
}

// tr((B kron W)(V kron Phi)) = tr(BV) tr(W Phi).  B, V are k x k and W, Phi
// are T x T; the factorization avoids ever forming the kT x kT products.
inline double kron_trace_product(const Mat& B, const Mat& W, const Mat& V,
                                 const Mat& Phi) {
  if (B.rows() != B.cols() || V.rows() != V.cols() || B.rows() != V.rows())
    throw UsageError("kron_trace_product: B and V must be square with equal dim");
  if (W.rows() != W.cols() || Phi.rows() != Phi.cols() || W.rows() != Phi.rows())
    throw UsageError("kron_trace_product: W and Phi must be square with equal dim");
  return (B * V).trace() * (W * Phi).trace();
}

// Dense fallbacks used by callers that want an explicit matrix regardless of
// structure.  Kept simple on purpose: these are the reference routines the
// structured paths are tested against.
inline Mat dense_inverse(const Mat& m) {
  if (m.rows() != m.cols()) throw UsageError("dense_inverse: matrix not square");
  Eigen::PartialPivLU<Mat> lu(m);
  return lu.inverse();
}

inline double dense_log_det_spd(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success)
    throw DomainError("dense_log_det_spd: matrix not positive definite");
  return 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
}

inline Vec solve_spd(const Mat& m, const Vec& b) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success)
    throw DomainError("solve_spd: matrix not positive definite");
  return llt.solve(b);
}

inline Mat solve_spd(const Mat& m, const Mat& b) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success)
    throw DomainError("solve_spd: matrix not positive definite");
  return llt.solve(b);
}

}  // namespace lowfr
