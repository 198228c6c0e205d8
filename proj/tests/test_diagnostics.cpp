#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lowfr/diagnostics.hpp"
#include "lowfr/rng.hpp"

using namespace lowfr;

namespace {

std::vector<Vec> iid_chains(int m, int n, std::uint64_t seed) {
  RngStream rng(seed, 0x71);
  std::vector<Vec> out;
  for (int c = 0; c < m; ++c) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
    out.push_back(v);
  }
  return out;
}

std::vector<Vec> ar1_chains(int m, int n, double rho, std::uint64_t seed) {
  RngStream rng(seed, 0x72);
  std::vector<Vec> out;
  const double innov = std::sqrt(1.0 - rho * rho);
  for (int c = 0; c < m; ++c) {
    Vec v(n);
    double x = rng.normal();
    for (int i = 0; i < n; ++i) {
      v[i] = x;
      x = rho * x + innov * rng.normal();
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("split R-hat closed cases", "[diagnostics]") {
  SECTION("identical chains sit at one") {
    const auto base = iid_chains(1, 2000, 401);
    const std::vector<Vec> chains = {base[0], base[0]};
    const double r = split_rhat(chains);
    CHECK(std::abs(r - 1.0) < 0.001);
  }
  SECTION("offset chains blow up") {
    // Rank normalization bounds how far two separated chains can push the
    // statistic (weighted half-normals cap it near 1.83), so use four chains
    // at distinct levels, which saturates near 2.8.
    auto chains = iid_chains(4, 1000, 402);
    for (int c = 0; c < 4; ++c) chains[c].array() += 10.0 * c;
    CHECK(split_rhat(chains) > 2.0);
  }
  SECTION("iid chains calibrate below 1.01") {
    int ok = 0;
    const int trials = 50;
    for (int tr = 0; tr < trials; ++tr)
      if (split_rhat(iid_chains(4, 1000, 500 + std::uint64_t(tr))) < 1.01) ++ok;
    CHECK(ok >= 47);
  }
  SECTION("a within-chain trend is caught by the split") {
    // Two halves of each chain live at different levels: classic
    // non-stationarity that unsplit R-hat misses.
    Vec a(1000), b(1000);
    RngStream rng(403, 0);
    for (int i = 0; i < 1000; ++i) {
      const double shift = i < 500 ? -2.0 : 2.0;
      a[i] = shift + 0.1 * rng.normal();
      b[i] = shift + 0.1 * rng.normal();
    }
    CHECK(split_rhat({a, b}) > 1.5);
  }
  SECTION("constant parameter flags NaN") {
    const std::vector<Vec> chains = {Vec::Ones(100), Vec::Ones(100)};
    CHECK(std::isnan(split_rhat(chains)));
  }
  SECTION("input validation") {
    CHECK_THROWS_AS(split_rhat({Vec::Ones(100)}), UsageError);
    CHECK_THROWS_AS(split_rhat({Vec::Ones(3), Vec::Ones(3)}), UsageError);
    CHECK_THROWS_AS(split_rhat({Vec::Ones(100), Vec::Ones(50)}), UsageError);
  }
}

TEST_CASE("effective sample size tracks the autocorrelation time", "[diagnostics]") {
  SECTION("iid draws") {
    const auto chains = iid_chains(4, 1000, 411);
    const double ess = ess_bulk(chains);
    CHECK(ess > 0.85 * 4000);
    CHECK(ess < 1.15 * 4000);
    const double esst = ess_tail(chains);
    CHECK(esst > 0.75 * 4000);
    CHECK(esst < 1.25 * 4000);
  }
  SECTION("AR(1) draws match the analytic autocorrelation time") {
    const double rho = 0.9;
    const auto chains = ar1_chains(4, 5000, rho, 412);
    const double ess = ess_bulk(chains);
    const double want = 4.0 * 5000.0 * (1.0 - rho) / (1.0 + rho);
    CHECK(ess > 0.75 * want);
    CHECK(ess < 1.25 * want);
  }
  SECTION("anticorrelated alternation is super-efficient but capped") {
    RngStream rng(413, 0);
    std::vector<Vec> chains;
    for (int c = 0; c < 2; ++c) {
      Vec v(2000);
      for (int i = 0; i < 1000; ++i) {
        const double z = rng.normal();
        v[2 * i] = z;
        v[2 * i + 1] = -z;
      }
      chains.push_back(v);
    }
    const double ess = ess_bulk(chains);
    const double total = 2.0 * 2000.0;
    CHECK(ess > total);
    CHECK(ess <= 10.0 * total + 1e-9);
  }
  SECTION("constant parameter flags NaN") {
    const std::vector<Vec> chains = {Vec::Zero(100), Vec::Zero(100)};
    CHECK(std::isnan(ess_bulk(chains)));
    CHECK(std::isnan(ess_tail(chains)));
  }
  SECTION("tail ESS collapses under sticky-variance excursions") {
    // Signs flip independently, so the rank-normalized draws decorrelate
    // immediately and the bulk looks healthy.  The scale follows a sticky
    // two-state chain (expected dwell 100 draws), so the tail-quantile
    // indicators stay correlated across whole excursions.
    std::vector<Vec> chains;
    for (int c = 0; c < 4; ++c) {
      RngStream rng(414, 0x414 + std::uint64_t(c));
      Vec v(2000);
      double s = 1.0;
      for (int i = 0; i < 2000; ++i) {
        if (rng.uniform() < 0.005) s = (s == 1.0) ? 5.0 : 1.0;
        v[i] = s * rng.normal();
      }
      chains.push_back(v);
    }
    const double bulk = ess_bulk(chains);
    const double tail = ess_tail(chains);
    REQUIRE(std::isfinite(tail));
    CHECK(tail > 0.0);
    CHECK(bulk > 0.7 * 8000);
    CHECK(tail < 0.25 * bulk);
  }
}
