#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "lowfr/matrix.hpp"
#include "lowfr/simgen.hpp"

using namespace lowfr;

namespace {

// Dense conditional-moment reference, no structure exploited.
struct DenseTruth {
  double alpha0;
  Vec alpha;
  Mat gamma;
};

DenseTruth dense_factor_truth(const SimTruth& tr) {
  const int p = tr.p, T = tr.T, k = tr.k;
  const Mat Phi = CompoundSymmetric(T, tr.phi).dense();
  const Mat Psi_eta = kron(Mat::Identity(k, k), Phi);
  Mat Sigma = Mat::Zero(p, p);
  Sigma.diagonal() = tr.sigma2;
  const Mat Psi_eps = kron(Sigma, Phi);
  const Mat L = kron(tr.Lambda, Mat::Identity(T, T));

  const Mat S = L * Psi_eta * L.transpose() + Psi_eps;
  const Mat Sinv = dense_inverse(S);
  const Mat A = Psi_eta * L.transpose() * Sinv;          // kT x pT acting on x
  const Mat V = Psi_eta - A * L * Psi_eta;               // kT x kT

  const Mat Theta = tr.beta.transpose() * tr.omega;      // k x T
  Vec theta(k * T);
  for (int q = 0; q < k; ++q)
    for (int t = 0; t < T; ++t) theta[q * T + t] = Theta(q, t);
  const Mat Omega = kron(tr.B, tr.W);

  DenseTruth out;
  out.alpha0 = (Omega * V).trace();
  out.alpha = A.transpose() * theta;
  const Mat G = A.transpose() * Omega * A;
  out.gamma = 0.5 * (G + G.transpose());
  return out;
}

Mat sample_cov(const Mat& draws) {
  const Vec mean = draws.colwise().mean();
  Mat c = draws.rowwise() - mean.transpose();
  return c.transpose() * c / double(draws.rows() - 1);
}

}  // namespace

TEST_CASE("motivating example pins the published coefficient pattern", "[simgen]") {
  SECTION("rank-1 coefficients are the outer product") {
    auto [data, truth] = gen_intro(1, 50, 101);
    REQUIRE(truth.p == 5);
    REQUIRE(truth.T == 3);
    const Vec w = (Vec(3) << 0.25, 0.25, 0.5).finished();
    const Vec b = (Vec(5) << 1, 3, 2, -1, -2).finished();
    for (int j = 0; j < 5; ++j)
      for (int t = 0; t < 3; ++t)
        CHECK(truth.alpha[j * 3 + t] == Catch::Approx(w[t] * b[j]));
    // Exposure 2 at the final time carries the large loading.
    CHECK(truth.alpha[1 * 3 + 2] == Catch::Approx(1.5));
    CHECK(truth.gamma.cwiseAbs().maxCoeff() == 0.0);
    const Vec cum_want = 2.0 * b;
    for (int j = 0; j < 5; ++j) CHECK(truth.cumulative[j] == Catch::Approx(cum_want[j]));
    CHECK(truth_cumulative(truth) == truth.cumulative);
  }
  SECTION("rank-2 adds a second profile on the last two exposures") {
    auto [data, truth] = gen_intro(2, 50, 102);
    CHECK(truth.alpha[1 * 3 + 2] == Catch::Approx(1.5));
    CHECK(truth.alpha[3 * 3 + 0] == Catch::Approx(0.8 * -1.0));
    CHECK(truth.alpha[4 * 3 + 1] == Catch::Approx(0.1 * -2.0));
  }
  SECTION("usage errors") {
    CHECK_THROWS_AS(gen_intro(3, 10, 1), UsageError);
    CHECK_THROWS_AS(gen_intro(1, 0, 1), UsageError);
    SimTruth empty;
    CHECK_THROWS_AS(truth_cumulative(empty), UsageError);
  }
  SECTION("exposure covariance and outcome variance match the design") {
    const int n = 50000;
    auto [data, truth] = gen_intro(1, n, 103);
    const Mat cov = sample_cov(data.x);
    const Mat Phi = CompoundSymmetric(3, 0.7).dense();
    const Mat want = kron(Mat::Identity(5, 5), Phi);
    CHECK((cov - want).cwiseAbs().maxCoeff() < 0.03);

    const double var_want = truth.alpha.dot(want * truth.alpha) + 5.0;
    const double ybar = data.y.mean();
    const double var_got = (data.y.array() - ybar).square().sum() / (n - 1);
    CHECK(std::abs(var_got - var_want) / var_want < 0.05);
  }
  SECTION("seed determinism") {
    auto [d1, t1] = gen_intro(1, 20, 104);
    auto [d2, t2] = gen_intro(1, 20, 104);
    auto [d3, t3] = gen_intro(1, 20, 105);
    CHECK(d1.x == d2.x);
    CHECK(d1.y == d2.y);
    CHECK(d1.x != d3.x);
  }
}

TEST_CASE("factor scenarios draw sparse structured truths", "[simgen]") {
  auto [data, truth] = gen_scenario(1, 201);
  REQUIRE(data.n == 200);
  REQUIRE(data.p == 10);
  REQUIRE(data.T == 3);
  REQUIRE(truth.k == 5);

  SECTION("component shapes and supports") {
    REQUIRE(truth.omega.rows() == 1);
    CHECK(truth.omega.row(0).sum() == Catch::Approx(1.0));
    CHECK(truth.omega.minCoeff() >= 0.0);
    CHECK(truth.W.sum() == Catch::Approx(1.0));
    CHECK(truth.W.minCoeff() >= 0.0);

    int nz_beta = 0;
    for (int q = 0; q < 5; ++q)
      if (truth.beta(0, q) != 0.0) {
        ++nz_beta;
        const double a = std::abs(truth.beta(0, q));
        CHECK(a >= 1.0);
        CHECK(a <= 2.0);
      }
    CHECK(nz_beta == 2);

    int nz_B = 0;
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b)
        if (truth.B(a, b) != 0.0) {
          ++nz_B;
          CHECK(std::abs(truth.B(a, b)) >= 1.0);
          CHECK(std::abs(truth.B(a, b)) <= 2.0);
        }
    CHECK(nz_B == 3);

    CHECK(truth.sigma2 == Vec::Constant(10, 0.25));
    CHECK(truth.phi == 0.5);
    CHECK(truth.Lambda.rows() == 10);
    CHECK(truth.Lambda.cols() == 5);
  }

  SECTION("recorded truth equals the dense conditional-moment reference") {
    const DenseTruth want = dense_factor_truth(truth);
    CHECK(std::abs(truth.alpha0 - want.alpha0) < 1e-8);
    CHECK((truth.alpha - want.alpha).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((truth.gamma - want.gamma).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((truth.gamma - truth.gamma.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  }

  SECTION("scenario 2 carries two factor-coefficient rows") {
    auto [d2, t2] = gen_scenario(2, 202);
    REQUIRE(t2.beta.rows() == 2);
    REQUIRE(t2.omega.rows() == 2);
    for (int l = 0; l < 2; ++l) {
      CHECK(t2.omega.row(l).sum() == Catch::Approx(1.0));
      int nz = 0;
      for (int q = 0; q < 5; ++q)
        if (t2.beta(l, q) != 0.0) ++nz;
      CHECK(nz == 2);
    }
    const DenseTruth want = dense_factor_truth(t2);
    CHECK(std::abs(t2.alpha0 - want.alpha0) < 1e-8);
    CHECK((t2.alpha - want.alpha).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((t2.gamma - want.gamma).cwiseAbs().maxCoeff() < 1e-8);
  }

  SECTION("latent draws have the declared covariance") {
    auto [dd, tt] = gen_scenario(1, 203, 20000);
    const Mat cov = sample_cov(tt.eta);
    const Mat want = kron(Mat::Identity(5, 5), CompoundSymmetric(3, 0.5).dense());
    CHECK((cov - want).cwiseAbs().maxCoeff() < 0.06);
  }

  SECTION("determinism and validation") {
    auto [a1, x1] = gen_scenario(1, 204);
    auto [a2, x2] = gen_scenario(1, 204);
    CHECK(a1.x == a2.x);
    CHECK(a1.y == a2.y);
    CHECK_THROWS_AS(gen_scenario(0, 1), UsageError);
    CHECK_THROWS_AS(gen_scenario(4, 1), UsageError);
    CHECK_THROWS_AS(gen_scenario(1, 1, 0), UsageError);
  }
}

TEST_CASE("direct scenario is sparse with within-time interactions", "[simgen]") {
  auto [data, truth] = gen_scenario(3, 301);
  const int p = 10, T = 3;

  SECTION("four active exposures, constant-plus-jitter profiles") {
    std::set<int> active;
    for (int j = 0; j < p; ++j)
      for (int t = 0; t < T; ++t)
        if (truth.alpha[j * T + t] != 0.0) active.insert(j);
    CHECK(active.size() == 4);
    for (int j : active) {
      double mn = 1e9, mx = -1e9, mean = 0;
      for (int t = 0; t < T; ++t) {
        const double a = truth.alpha[j * T + t];
        mn = std::min(mn, a);
        mx = std::max(mx, a);
        mean += a / T;
      }
      // Jitter is an order of magnitude below the level.
      CHECK(mx - mn < 0.3);
      CHECK(std::abs(mean) > 0.1);
      CHECK(std::abs(mean) < 0.5);
    }
  }

  SECTION("ten interacting pairs, same-time entries only") {
    std::set<std::pair<int, int>> pairs;
    for (int a = 0; a < p * T; ++a)
      for (int b = 0; b < p * T; ++b) {
        if (truth.gamma(a, b) == 0.0) continue;
        const int j1 = a / T, t1 = a % T, j2 = b / T, t2 = b % T;
        CHECK(t1 == t2);
        CHECK(j1 != j2);
        if (j1 < j2) pairs.insert({j1, j2});
        // Half of a coefficient drawn around 0.05..0.15 in magnitude.
        const double c = 2.0 * std::abs(truth.gamma(a, b));
        CHECK(c > 0.005);
        CHECK(c < 0.25);
      }
    CHECK(pairs.size() == 10);
    CHECK((truth.gamma - truth.gamma.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("exposure covariance is the doubly compound-symmetric Kronecker") {
    auto [dd, tt] = gen_scenario(3, 302, 20000);
    const Mat cov = sample_cov(dd.x);
    const Mat want =
        kron(CompoundSymmetric(p, 0.7).dense(), CompoundSymmetric(T, 0.7).dense());
    CHECK((cov - want).cwiseAbs().maxCoeff() < 0.05);
  }

  SECTION("cumulative contrast doubles the time-summed mains") {
    for (int j = 0; j < p; ++j) {
      double s = 0;
      for (int t = 0; t < T; ++t) s += truth.alpha[j * T + t];
      CHECK(truth.cumulative[j] == Catch::Approx(2.0 * s));
    }
  }
}
