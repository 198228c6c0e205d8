#include <catch2/catch_amalgamated.hpp>

#include "lowfr/matrix.hpp"
#include "lowfr/rng.hpp"

using namespace lowfr;

namespace {

// Independent element-by-element Kronecker for use as an oracle.
Mat kron_naive(const Mat& A, const Mat& B) {
  Mat out(A.rows() * B.rows(), A.cols() * B.cols());
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j)
      out(i, j) = A(i / B.rows(), j / B.cols()) * B(i % B.rows(), j % B.cols());
  return out;
}

Mat random_mat(RngStream& rng, int r, int c) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("kron matches element-indexed oracle", "[matrix]") {
  RngStream rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const int ar = 1 + rng.uniform_int(4), ac = 1 + rng.uniform_int(4);
    const int br = 1 + rng.uniform_int(4), bc = 1 + rng.uniform_int(4);
    const Mat A = random_mat(rng, ar, ac), B = random_mat(rng, br, bc);
    REQUIRE((kron(A, B) - kron_naive(A, B)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("kron mixed-product property", "[matrix]") {
  RngStream rng(12);
  const Mat A = random_mat(rng, 3, 4), B = random_mat(rng, 2, 5);
  const Mat C = random_mat(rng, 4, 3), D = random_mat(rng, 5, 2);
  const Mat lhs = kron(A, B) * kron(C, D);
  const Mat rhs = kron(Mat(A * C), Mat(B * D));
  REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("kron identity factors", "[matrix]") {
  RngStream rng(13);
  const Mat A = random_mat(rng, 3, 3);
  REQUIRE((kron(Mat(Mat::Identity(1, 1)), A) - A).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((kron(A, Mat(Mat::Identity(1, 1))) - A).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kron size guard", "[matrix]") {
  const Mat big = Mat::Ones(1 << 10, 1 << 10);
  REQUIRE_THROWS_AS(kron(big, big), UsageError);
}

TEST_CASE("compound symmetric closed-form inverse on a grid", "[matrix]") {
  for (int dim : {1, 2, 3, 5, 8}) {
    const double lo = dim == 1 ? -0.9 : -1.0 / (dim - 1) + 1e-3;
    for (double phi = lo; phi < 0.999; phi += 0.05) {
      const CompoundSymmetric cs(dim, phi);
      const Mat prod = cs.dense() * cs.inverse();
      REQUIRE((prod - Mat::Identity(dim, dim)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("compound symmetric log determinant matches dense", "[matrix]") {
  for (int dim : {2, 3, 6}) {
    for (double phi : {-0.2, 0.0, 0.3, 0.7, 0.95}) {
      if (phi <= -1.0 / (dim - 1)) continue;
      const CompoundSymmetric cs(dim, phi);
      Eigen::MatrixXd d = cs.dense();
      const double dense_ld = std::log(d.determinant());
      REQUIRE(cs.log_det() == Catch::Approx(dense_ld).margin(1e-10));
    }
  }
}

TEST_CASE("compound symmetric rejects non-PD correlations", "[matrix]") {
  REQUIRE_THROWS_AS(CompoundSymmetric(3, 1.0), DomainError);
  REQUIRE_THROWS_AS(CompoundSymmetric(3, -0.5), DomainError);
  REQUIRE_NOTHROW(CompoundSymmetric(3, -0.49));
  REQUIRE_NOTHROW(CompoundSymmetric(1, 0.0));
}

TEST_CASE("compound symmetric cholesky reconstructs", "[matrix]") {
  const CompoundSymmetric cs(4, 0.6);
  const Mat L = cs.cholesky();
  REQUIRE((L * L.transpose() - cs.dense()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kron_trace_product equals dense trace", "[matrix]") {
  RngStream rng(14);
  for (int rep = 0; rep < 10; ++rep) {
    const int k = 2 + rng.uniform_int(3), T = 2 + rng.uniform_int(3);
    const Mat B = random_mat(rng, k, k), W = random_mat(rng, T, T);
    const Mat V = random_mat(rng, k, k);
    const CompoundSymmetric phi(T, 0.4);
    const double fast = kron_trace_product(B, W, V, phi.dense());
    const double dense = (kron(B, W) * kron(V, phi.dense())).trace();
    REQUIRE(fast == Catch::Approx(dense).margin(1e-10));
  }
}

TEST_CASE("dense_inverse and solve_spd agree with Eigen", "[matrix]") {
  RngStream rng(15);
  const Mat A = random_mat(rng, 5, 5);
  const Mat Ainv = dense_inverse(A);
  REQUIRE((A * Ainv - Mat::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-10);

  Mat S = random_mat(rng, 5, 5);
  S = Mat(S * S.transpose());
  S.diagonal().array() += 5.0;
  const Mat X = solve_spd(S, Mat(Mat::Identity(5, 5)));
  REQUIRE((S * X - Mat::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-10);
  REQUIRE(dense_log_det_spd(S) ==
          Catch::Approx(std::log(Eigen::MatrixXd(S).determinant())).margin(1e-8));
}
