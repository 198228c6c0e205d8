#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lowfr/cqr.hpp"
#include "lowfr/dataset.hpp"
#include "lowfr/matrix.hpp"
#include "lowfr/model.hpp"
#include "lowfr/rng.hpp"

using namespace lowfr;

namespace {

ExposureDataset cqr_data(int n, int p, int T, int n_cov, uint64_t seed) {
  RngStream rng(seed, 0xC02);
  ExposureDataset d;
  d.n = n;
  d.p = p;
  d.T = T;
  d.y = Vec(n);
  d.x = Mat(n, p * T);
  d.z = Mat(n, n_cov);
  for (int j = 0; j < p; ++j) d.exposure_names.push_back("e" + std::to_string(j + 1));
  for (int c = 0; c < n_cov; ++c) d.covariate_names.push_back("z" + std::to_string(c + 1));
  for (int i = 0; i < n; ++i) {
    d.y[i] = rng.normal();
    for (int c = 0; c < p * T; ++c) d.x(i, c) = rng.normal();
    for (int c = 0; c < n_cov; ++c) d.z(i, c) = rng.normal();
  }
  return d;
}

int expected_terms(int p, int T) {
  return p * T + p * T * (T + 1) / 2 + p * (p - 1) / 2 * T * T;
}

// Dense multivariate normal log density, mean zero.
double mvn_lp(const Vec& g, const Mat& cov) {
  Eigen::LLT<Mat> llt(cov);
  REQUIRE(llt.info() == Eigen::Success);
  const Vec half = llt.matrixL().solve(g);
  double logdet = 0.0;
  for (int i = 0; i < cov.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * g.size() * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * half.squaredNorm();
}

}  // namespace

TEST_CASE("quadratic design enumerates terms canonically", "[cqr]") {
  SECTION("term counts") {
    CHECK(expected_terms(1, 2) == 5);
    CHECK(expected_terms(2, 1) == 5);
    for (auto [p, T] : std::vector<std::pair<int, int>>{{1, 2}, {2, 1}, {2, 3}, {3, 3}}) {
      const auto d = build_design(cqr_data(4, p, T, 0, 11));
      CHECK(d.m() == expected_terms(p, T));
      CHECK(d.n_main == p * T);
    }
  }
  SECTION("canonical order: mains lexicographic, then lower-triangular pairs") {
    const auto d = build_design(cqr_data(3, 2, 2, 0, 12));
    REQUIRE(d.m() == 14);
    // Mains: (j,t) = (0,0),(0,1),(1,0),(1,1).
    for (int c = 0; c < 4; ++c) {
      CHECK(d.terms[c].main);
      CHECK(d.terms[c].j1 == c / 2);
      CHECK(d.terms[c].t1 == c % 2);
    }
    // Same-exposure block for exposure 1 uses t2 <= t1.
    CHECK((!d.terms[4].main && d.terms[4].j1 == 0 && d.terms[4].j2 == 0 &&
           d.terms[4].t1 == 0 && d.terms[4].t2 == 0));
    CHECK((d.terms[5].t1 == 1 && d.terms[5].t2 == 0));
    CHECK((d.terms[6].t1 == 1 && d.terms[6].t2 == 1));
    // Cross block (j1=1, j2=0) runs over all T^2 pairs.
    for (int c = 7; c < 11; ++c) {
      CHECK(d.terms[c].j1 == 1);
      CHECK(d.terms[c].j2 == 0);
    }
    CHECK((d.terms[8].t1 == 0 && d.terms[8].t2 == 1));
    CHECK((d.terms[9].t1 == 1 && d.terms[9].t2 == 0));
  }
  SECTION("design entries are the measurement products") {
    const auto data = cqr_data(6, 2, 3, 0, 13);
    const auto d = build_design(data);
    for (int i = 0; i < data.n; ++i)
      for (int c = 0; c < d.m(); ++c) {
        const auto& t = d.terms[c];
        const double want =
            t.main ? data.x(i, data.xcol(t.j1, t.t1))
                   : data.x(i, data.xcol(t.j1, t.t1)) * data.x(i, data.xcol(t.j2, t.t2));
        CHECK(d.X(i, c) == want);
      }
  }
  SECTION("canonical_int maps any index order to the stored term") {
    const auto a = canonical_int(0, 0, 1, 1);
    CHECK((a.j1 == 1 && a.t1 == 1 && a.j2 == 0 && a.t2 == 0));
    const auto b = canonical_int(1, 0, 1, 1);
    CHECK((b.j1 == 1 && b.t1 == 1 && b.j2 == 1 && b.t2 == 0));
    const auto c = canonical_int(1, 1, 0, 0);
    CHECK((c.j1 == 1 && c.t1 == 1 && c.j2 == 0 && c.t2 == 0));
  }
  SECTION("missing data is rejected") {
    auto data = cqr_data(5, 2, 2, 0, 14);
    data.x(2, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(build_design(data), UsageError);
    auto masked = cqr_data(5, 2, 2, 0, 15);
    masked.x(1, 0) = std::numeric_limits<double>::quiet_NaN();
    masked.mask.push_back({1, 0, 0});
    CHECK_THROWS_AS(build_design(masked), UsageError);
  }
}

TEST_CASE("coefficient prior covariance is block compound-symmetric", "[cqr]") {
  SECTION("worked 1x2 example") {
    const auto d = build_design(cqr_data(3, 1, 2, 0, 21));
    const Mat cov = cqr_prior_covariance(d, 2.0, 1.0, 0.5, 0.0);
    REQUIRE(cov.rows() == 5);
    // Main block: nu 2, psi 0.5.
    CHECK(cov(0, 0) == Catch::Approx(2.0));
    CHECK(cov(0, 1) == Catch::Approx(1.0));
    CHECK(cov(1, 0) == Catch::Approx(1.0));
    CHECK(cov(1, 1) == Catch::Approx(2.0));
    // Interaction block independent at psi 0, and no cross-block mass.
    for (int a = 2; a < 5; ++a)
      for (int b = 0; b < 5; ++b)
        CHECK(cov(a, b) == Catch::Approx(a == b ? 1.0 : 0.0));
  }
  SECTION("block partition matches the term runs") {
    const auto d = build_design(cqr_data(3, 2, 3, 0, 22));
    const auto blocks = d.prior_blocks();
    REQUIRE(blocks.size() == 5);
    CHECK(blocks[0] == std::make_pair(0, 3));
    CHECK(blocks[1] == std::make_pair(3, 3));
    CHECK(blocks[2] == std::make_pair(6, 6));   // (1,1) pairs
    CHECK(blocks[3] == std::make_pair(12, 9));  // (2,1) cross
    CHECK(blocks[4] == std::make_pair(21, 6));  // (2,2) pairs
  }
  SECTION("positive definite across the psi range") {
    const auto d = build_design(cqr_data(3, 2, 3, 0, 23));
    for (double psi : {0.0, 0.3, 0.7, 0.99, 1.0 - 1e-6}) {
      const Mat cov = cqr_prior_covariance(d, 1.5, 0.7, psi, psi);
      Eigen::LLT<Mat> llt(cov);
      CHECK(llt.info() == Eigen::Success);
    }
  }
  SECTION("domain errors") {
    const auto d = build_design(cqr_data(3, 1, 2, 0, 24));
    CHECK_THROWS_AS(cqr_prior_covariance(d, 0.0, 1.0, 0.5, 0.5), DomainError);
    CHECK_THROWS_AS(cqr_prior_covariance(d, 1.0, -1.0, 0.5, 0.5), DomainError);
    CHECK_THROWS_AS(cqr_prior_covariance(d, 1.0, 1.0, 1.0, 0.5), DomainError);
    CHECK_THROWS_AS(cqr_prior_covariance(d, 1.0, 1.0, 0.5, -0.1), DomainError);
  }
  SECTION("correlation pools block coefficients toward a common value") {
    // Conjugate Gaussian posterior for the two main coefficients with fixed
    // hyperparameters: independent prior recovers the distinct truths, a
    // near-unit psi forces them together.
    RngStream rng(25, 0xC03);
    const int n = 60;
    auto data = cqr_data(n, 1, 2, 0, 26);
    for (int i = 0; i < n; ++i)
      data.y[i] = 2.0 * data.x(i, 0) - 1.0 * data.x(i, 1) + 0.5 * rng.normal();
    const auto d = build_design(data);
    const double sigma2 = 0.25;
    auto posterior_mean = [&](double psi) {
      const Mat prior = cqr_prior_covariance(d, 1.0, 1.0, psi, 0.0);
      const Mat prec = d.X.transpose() * d.X / sigma2 + dense_inverse(prior);
      return Vec(solve_spd(prec, Vec(d.X.transpose() * data.y / sigma2)));
    };
    const Vec free = posterior_mean(0.0);
    CHECK(std::abs(free[0] - 2.0) < 0.3);
    CHECK(std::abs(free[1] + 1.0) < 0.3);
    const Vec pooled = posterior_mean(1.0 - 1e-6);
    CHECK(std::abs(pooled[0] - pooled[1]) < 0.05);
    CHECK(std::abs(free[0] - free[1]) > 2.0);
  }
}

TEST_CASE("quadratic model density matches a dense prior oracle", "[cqr]") {
  // n = 0 removes the likelihood; what remains must equal the sum of the
  // component densities with the CS blocks evaluated densely.
  auto data = cqr_data(0, 2, 3, 0, 31);
  const auto d = build_design(data);
  CqrModel model(d, data);
  REQUIRE(model.dim() == 1 + d.m() + 5);

  RngStream rng(32, 0xC04);
  for (int rep = 0; rep < 5; ++rep) {
    Vec u(model.dim());
    for (int i = 0; i < u.size(); ++i) u[i] = rng.uniform(-0.8, 0.8);
    const double got = model.log_posterior(u, nullptr);

    const double sigma2 = std::exp(u[model.idx_sigma2()]);
    const double nu_main = std::exp(u[model.idx_nu_main()]);
    const double nu_int = std::exp(u[model.idx_nu_int()]);
    const double psi_main = 1.0 / (1.0 + std::exp(-u[model.idx_psi_main()]));
    const double psi_int = 1.0 / (1.0 + std::exp(-u[model.idx_psi_int()]));

    double want = 0.0;
    want += u[model.idx_sigma2()] + u[model.idx_nu_main()] + u[model.idx_nu_int()];
    want += std::log(psi_main * (1.0 - psi_main)) + std::log(psi_int * (1.0 - psi_int));
    want += density::normal_lp(u[0], 10.0);
    want += density::inv_gamma_lp(sigma2, 1.0, 1.0);
    want += density::inv_gamma_lp(nu_main, 1.0, 1.0);
    want += density::inv_gamma_lp(nu_int, 1.0, 1.0);
    const Mat cov = cqr_prior_covariance(d, nu_main, nu_int, psi_main, psi_int);
    want += mvn_lp(u.segment(1, d.m()), cov);

    CHECK(got == Catch::Approx(want).margin(1e-9));
  }
}

TEST_CASE("quadratic model gradient agrees with finite differences", "[cqr]") {
  auto data = cqr_data(12, 2, 2, 1, 41);
  const auto d = build_design(data);
  CqrModel model(d, data);
  RngStream rng(42, 0xC05);
  const double h = 1e-5;
  for (int rep = 0; rep < 20; ++rep) {
    Vec u(model.dim());
    for (int i = 0; i < u.size(); ++i) u[i] = rng.uniform(-0.8, 0.8);
    Vec g;
    model.log_posterior(u, &g);
    for (int i = 0; i < u.size(); ++i) {
      Vec up = u, dn = u;
      up[i] += h;
      dn[i] -= h;
      const double fd =
          (model.log_posterior(up, nullptr) - model.log_posterior(dn, nullptr)) / (2 * h);
      const double rel = std::abs(fd - g[i]) / std::max(1.0, std::abs(fd));
      CHECK(rel < 1e-4);
    }
  }
  SECTION("saturated slots fail softly, wrong length loudly") {
    Vec u = Vec::Zero(model.dim());
    u[model.idx_sigma2()] = 800.0;
    CHECK(model.log_posterior(u, nullptr) == -std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(model.log_posterior(Vec::Zero(3), nullptr), UsageError);
  }
}

TEST_CASE("mean imputation completes the exposure matrix", "[cqr]") {
  auto data = cqr_data(5, 2, 2, 0, 51);
  const double kept0 = data.x(0, 1), kept3 = data.x(3, 1);
  data.x(1, 1) = data.x(2, 1) = data.x(4, 1) = std::numeric_limits<double>::quiet_NaN();
  data.mask = {{1, 0, 1}, {2, 0, 1}, {4, 0, 1}};
  const auto filled = cqr_impute_means(data);
  CHECK(filled.mask.empty());
  const double mean = (kept0 + kept3) / 2.0;
  CHECK(filled.x(1, 1) == Catch::Approx(mean));
  CHECK(filled.x(2, 1) == Catch::Approx(mean));
  CHECK(filled.x(4, 1) == Catch::Approx(mean));
  CHECK(filled.x(0, 1) == kept0);
  CHECK_NOTHROW(build_design(filled));

  auto empty = cqr_data(3, 1, 1, 0, 52);
  for (int i = 0; i < 3; ++i) empty.x(i, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(cqr_impute_means(empty), UsageError);
}

TEST_CASE("quadratic draws induce the matching surface", "[cqr]") {
  const auto data = cqr_data(4, 2, 2, 0, 61);
  const auto d = build_design(data);
  REQUIRE(d.m() == 14);
  Vec v = Vec::Zero(1 + d.m() + 5);
  v[0] = 0.7;
  for (int c = 0; c < d.m(); ++c) v[1 + c] = double(c + 1);

  const auto ic = cqr_induced(d, 0, v);
  CHECK(ic.alpha0 == 0.7);
  CHECK(ic.alpha[0] == 1.0);
  CHECK(ic.alpha[3] == 4.0);
  // Same-measurement square keeps full weight; distinct pairs split in half.
  CHECK(ic.gamma(0, 0) == Catch::Approx(5.0));
  CHECK(ic.gamma(1, 0) == Catch::Approx(3.0));
  CHECK(ic.gamma(0, 1) == Catch::Approx(3.0));
  CHECK(ic.gamma(1, 1) == Catch::Approx(7.0));
  CHECK(ic.gamma(2, 1) == Catch::Approx(4.5));
  CHECK(ic.gamma(3, 2) == Catch::Approx(6.5));
  CHECK(ic.gamma(3, 3) == Catch::Approx(14.0));
  CHECK((ic.gamma - ic.gamma.transpose()).cwiseAbs().maxCoeff() == 0.0);

  SECTION("surface equals the design-row prediction") {
    CqrModel model(d, data);
    RngStream rng(62, 0xC06);
    for (int rep = 0; rep < 10; ++rep) {
      Vec xraw(d.p * d.T);
      for (int i = 0; i < xraw.size(); ++i) xraw[i] = rng.normal();
      Vec xrow(d.m());
      for (int c = 0; c < d.m(); ++c) {
        const auto& t = d.terms[c];
        xrow[c] = t.main ? xraw[t.j1 * d.T + t.t1]
                         : xraw[t.j1 * d.T + t.t1] * xraw[t.j2 * d.T + t.t2];
      }
      const double pred = model.predict(v, xrow, Vec());
      CHECK(pred == Catch::Approx(induced_surface(ic, xraw)).margin(1e-12));
    }
  }
}

TEST_CASE("quadratic model names align with the term order", "[cqr]") {
  auto data = cqr_data(3, 2, 2, 1, 71);
  data.covariate_names = {"age"};
  const auto d = build_design(data);
  CqrModel model(d, data);
  const auto names = model.names(data);
  REQUIRE(int(names.size()) == model.dim());
  CHECK(names[0] == "mu");
  CHECK(names[1] == "c_age");
  CHECK(names[2] == "theta[1,1]");
  CHECK(names[5] == "theta[2,2]");
  CHECK(names[6] == "gamma[1,1,1,1]");
  CHECK(names[10] == "gamma[2,1,1,2]");
  CHECK(names[names.size() - 5] == "sigma2_y");
  CHECK(names[names.size() - 1] == "psi_int");
}
