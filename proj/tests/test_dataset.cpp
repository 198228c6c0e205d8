#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lowfr/dataset.hpp"
#include "lowfr/rng.hpp"

using namespace lowfr;

namespace {

ExposureDataset small_data() {
  ExposureDataset d;
  d.n = 4;
  d.p = 2;
  d.T = 2;
  d.exposure_names = {"a", "b"};
  d.x = Mat(4, 4);
  d.x << 1, 2, 3, 4,
         2, 3, 4, 5,
         3, 4, 5, 6,
         8, 5, 6, 7;
  d.y = Vec(4);
  d.y << 1, 2, 3, 5;
  return d;
}

}  // namespace

TEST_CASE("validate accepts clean data and rejects inconsistencies", "[dataset]") {
  ExposureDataset d = small_data();
  REQUIRE_NOTHROW(d.validate());

  SECTION("mask without NaN") {
    d.mask.push_back({0, 0, 0});
    REQUIRE_THROWS_AS(d.validate(), UsageError);
  }
  SECTION("NaN without mask") {
    d.x(1, 2) = std::nan("");
    REQUIRE_THROWS_AS(d.validate(), UsageError);
  }
  SECTION("mask and NaN agree") {
    d.x(1, 2) = std::nan("");
    d.mask.push_back({1, 1, 0});
    REQUIRE_NOTHROW(d.validate());
  }
  SECTION("NaN outcome rejected") {
    d.y[0] = std::nan("");
    REQUIRE_THROWS_AS(d.validate(), UsageError);
  }
  SECTION("mask out of range") {
    d.x(0, 0) = std::nan("");
    d.mask.push_back({0, 5, 0});
    REQUIRE_THROWS_AS(d.validate(), UsageError);
  }
}

TEST_CASE("xcol indexing is exposure-major", "[dataset]") {
  const ExposureDataset d = small_data();
  REQUIRE(d.xcol(0, 0) == 0);
  REQUIRE(d.xcol(0, 1) == 1);
  REQUIRE(d.xcol(1, 0) == 2);
  REQUIRE(d.xcol_name(1, 1) == "b_2");
}

TEST_CASE("standardize produces zero mean unit sd and a correct record",
          "[dataset]") {
  const ExposureDataset d = small_data();
  StandardizationRecord rec;
  const ExposureDataset s = standardize(d, &rec);

  for (int c = 0; c < 4; ++c) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < 4; ++i) mean += s.x(i, c);
    mean /= 4;
    for (int i = 0; i < 4; ++i) var += (s.x(i, c) - mean) * (s.x(i, c) - mean);
    var /= 3;
    REQUIRE(mean == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(var == Catch::Approx(1.0).margin(1e-12));
  }
  double ymean = s.y.mean();
  REQUIRE(ymean == Catch::Approx(0.0).margin(1e-12));

  // Record inverts the transform.
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 4; ++c)
      REQUIRE(rec.x_mean[c] + rec.x_sd[c] * s.x(i, c) ==
              Catch::Approx(d.x(i, c)).margin(1e-12));
  for (int i = 0; i < 4; ++i)
    REQUIRE(rec.y_mean + rec.y_sd * s.y[i] == Catch::Approx(d.y[i]).margin(1e-12));
}

TEST_CASE("standardize uses observed entries only", "[dataset]") {
  ExposureDataset d = small_data();
  d.x(3, 0) = std::nan("");
  d.mask.push_back({3, 0, 0});
  StandardizationRecord rec;
  const ExposureDataset s = standardize(d, &rec);

  // Column 0 statistics from rows 0..2 only: mean 2, sd 1.
  REQUIRE(rec.x_mean[0] == Catch::Approx(2.0));
  REQUIRE(rec.x_sd[0] == Catch::Approx(1.0));
  REQUIRE(std::isnan(s.x(3, 0)));
  REQUIRE(s.x(0, 0) == Catch::Approx(-1.0));
}

TEST_CASE("standardize rejects degenerate columns", "[dataset]") {
  SECTION("constant exposure column") {
    ExposureDataset d = small_data();
    d.x.col(1).setConstant(3.0);
    REQUIRE_THROWS_AS(standardize(d, nullptr), UsageError);
  }
  SECTION("constant outcome") {
    ExposureDataset d = small_data();
    d.y.setConstant(1.0);
    REQUIRE_THROWS_AS(standardize(d, nullptr), UsageError);
  }
  SECTION("under two observed values") {
    ExposureDataset d = small_data();
    for (int i = 0; i < 3; ++i) {
      d.x(i, 0) = std::nan("");
      d.mask.push_back({i, 0, 0});
    }
    REQUIRE_THROWS_AS(standardize(d, nullptr), UsageError);
  }
}

TEST_CASE("standardize is idempotent on already standardized data", "[dataset]") {
  const ExposureDataset d = small_data();
  const ExposureDataset s1 = standardize(d, nullptr);
  const ExposureDataset s2 = standardize(s1, nullptr);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 4; ++c)
      REQUIRE(s2.x(i, c) == Catch::Approx(s1.x(i, c)).margin(1e-12));
}

TEST_CASE("covariates pass through standardize unchanged", "[dataset]") {
  ExposureDataset d = small_data();
  d.covariate_names = {"sex"};
  d.z = Mat(4, 1);
  d.z << 0, 1, 0, 1;
  const ExposureDataset s = standardize(d, nullptr);
  REQUIRE(s.z(1, 0) == 1.0);
  REQUIRE(s.n_cov() == 1);
}
