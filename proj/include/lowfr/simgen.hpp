#pragma once

// Seed-deterministic simulation generators. Each generator documents its
// draw order; replications depend on it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lowfr/dataset.hpp"
#include "lowfr/errors.hpp"
#include "lowfr/induced.hpp"
#include "lowfr/layout.hpp"
#include "lowfr/matrix.hpp"
#include "lowfr/model_spec.hpp"
#include "lowfr/rng.hpp"

namespace lowfr {

struct SimTruth {
  int p = 0, T = 0, k = 0;

  // Generating parameters; factor scenarios only (intro and s3 draw
  // coefficients directly on the x scale).
  Mat Lambda, beta, omega, B, W;
  Vec sigma2;
  double phi = 0.0;
  Mat eta;  // n x kT latent draws actually used (factor scenarios)

  // Truth on the x scale.
  double alpha0 = 0.0;
  Vec alpha;   // pT
  Mat gamma;   // pT x pT symmetric
  Vec cumulative;  // per exposure: E[y | x=d_j] - E[y | x=-d_j]
};

namespace simgen_detail {

inline std::vector<std::string> exposure_names(int p) {
  std::vector<std::string> names;
  for (int j = 1; j <= p; ++j) names.push_back("x" + std::to_string(j));
  return names;
}

inline double signed_uniform(RngStream& rng, double lo, double hi) {
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  return sign * rng.uniform(lo, hi);
}

inline Vec cumulative_from_alpha(const Vec& alpha, int p, int T) {
  Vec cum = Vec::Zero(p);
  for (int j = 0; j < p; ++j)
    for (int t = 0; t < T; ++t) cum[j] += 2.0 * alpha[j * T + t];
  return cum;
}

// Constrained parameter vector holding the generating values, so truth can be
// computed by the same induced-coefficient path used on posterior draws.
inline InducedCoefficients factor_truth(int p, int T, int k, const Mat& beta,
                                        const Mat& omega, const Mat& B, const Mat& W,
                                        const Mat& Lambda, const Vec& sigma2,
                                        double phi) {
  ModelSpec spec;
  spec.n = 0;
  spec.p = p;
  spec.T = T;
  spec.k = k;
  spec.H1 = int(beta.rows());
  spec.variant = Variant::Lowfr;
  const ParamLayout lay = build_layout(spec);

  Vec v = Vec::Zero(lay.dim);
  auto put_mat = [&](Blk id, const Mat& m) {
    const Block& b = lay.at(id);
    detail::MapMutMat(v.data() + b.offset, b.rows, b.cols) = m;
  };
  auto fill_const = [&](Blk id, double c) {
    const Block& b = lay.at(id);
    v.segment(b.offset, b.rows * b.cols).setConstant(c);
  };
  put_mat(Blk::Beta, beta);
  put_mat(Blk::Omega, omega);
  put_mat(Blk::B, B);
  put_mat(Blk::W, W);
  put_mat(Blk::Lambda, Lambda);
  v.segment(lay.at(Blk::LogSigma2).offset, p) = sigma2;
  v[lay.at(Blk::LogitPhi).offset] = phi;
  // Positive-constrained nuisance slots, irrelevant to induced coefficients.
  for (Blk id : {Blk::LogXiBeta, Blk::LogXiOmega, Blk::LogDelta, Blk::LogA1,
                 Blk::LogA2, Blk::LogXiB, Blk::LogXiW, Blk::LogDeltaInt,
                 Blk::LogAInt, Blk::LogSigma2y})
    fill_const(id, 1.0);
  return induced_coefficients(spec, lay, v);
}

}  // namespace simgen_detail

// Small motivating example: p=5 exposures at T=3 times, x ~ N(0, I_5 (x) Psi)
// with Psi = CS(0.7), y ~ N(theta'x, 5); theta is a fixed rank-1 or rank-2
// coefficient vector. Draw order: per subject, exposure rows of x in order,
// then that subject's outcome noise.
inline std::pair<ExposureDataset, SimTruth> gen_intro(int rank, int n,
                                                      std::uint64_t seed) {
  if (rank != 1 && rank != 2) throw UsageError("gen_intro: rank must be 1 or 2");
  if (n < 1) throw UsageError("gen_intro: n must be positive");
  const int p = 5, T = 3;
  RngStream rng(seed, 0xA1);

  Mat theta_mat = Mat::Zero(T, p);  // (t, j)
  {
    Vec w1(T), b1(p);
    w1 << 0.25, 0.25, 0.5;
    if (rank == 1) {
      b1 << 1, 3, 2, -1, -2;
      theta_mat = w1 * b1.transpose();
    } else {
      b1 << 1, 3, 2, 0, 0;
      Vec w2(T), b2(p);
      w2 << 0.8, 0.1, 0.1;
      b2 << 0, 0, 0, -1, -2;
      theta_mat = w1 * b1.transpose() + w2 * b2.transpose();
    }
  }
  Vec alpha(p * T);
  for (int j = 0; j < p; ++j)
    for (int t = 0; t < T; ++t) alpha[j * T + t] = theta_mat(t, j);

  const CompoundSymmetric Psi(T, 0.7);
  const Mat L = Psi.cholesky();
  const double y_sd = std::sqrt(5.0);

  ExposureDataset data;
  data.n = n;
  data.p = p;
  data.T = T;
  data.exposure_names = simgen_detail::exposure_names(p);
  data.x = Mat(n, p * T);
  data.y = Vec(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      const Vec z = rng.normal_vec(T);
      data.x.row(i).segment(j * T, T) = (L * z).transpose();
    }
    data.y[i] = alpha.dot(data.x.row(i)) + y_sd * rng.normal();
  }
  data.validate();

  SimTruth truth;
  truth.p = p;
  truth.T = T;
  truth.alpha = alpha;
  truth.gamma = Mat::Zero(p * T, p * T);
  truth.cumulative = simgen_detail::cumulative_from_alpha(alpha, p, T);
  return {std::move(data), std::move(truth)};
}

// Factor-model scenarios (1 and 2) and the Kronecker-normal scenario (3).
//
// S1/S2 draw order: omega_1, W_1, beta_1 positions then values, B_1 positions
// then values, [S2: omega_2, beta_2 positions then values], Lambda row-major,
// then per subject: factor rows of E_i, noise rows of R_i, outcome noise.
//
// S3 draw order: main-effect exposure indices, per selected exposure a signed
// mean then T jitters; pair indices, per selected pair a signed mean then T
// jitters; then per subject: z for x, outcome noise.
inline std::pair<ExposureDataset, SimTruth> gen_scenario(int s, std::uint64_t seed,
                                                         int n = 200, int p = 10,
                                                         int T = 3, int k = 5) {
  if (s < 1 || s > 3) throw UsageError("gen_scenario: scenario must be 1, 2, or 3");
  if (n < 1 || p < 1 || T < 1 || k < 1)
    throw UsageError("gen_scenario: dimensions must be positive");
  RngStream rng(seed, 0xB0 + std::uint64_t(s));

  ExposureDataset data;
  data.n = n;
  data.p = p;
  data.T = T;
  data.exposure_names = simgen_detail::exposure_names(p);
  data.x = Mat(n, p * T);
  data.y = Vec(n);

  SimTruth truth;
  truth.p = p;
  truth.T = T;

  if (s == 1 || s == 2) {
    const int H1 = (s == 2) ? 2 : 1;
    Mat omega = Mat::Zero(H1, T), beta = Mat::Zero(H1, k);
    Mat W(T, T), B = Mat::Zero(k, k);

    auto draw_main_pair = [&](int l) {
      omega.row(l) = rng.dirichlet(T).transpose();
      if (l == 0) {
        const Vec w = rng.dirichlet(T * T);
        for (int a = 0; a < T; ++a)
          for (int b = 0; b < T; ++b) W(a, b) = w[a * T + b];
      }
      const auto pos = rng.sample_without_replacement(k, 2);
      for (int idx : pos) beta(l, idx) = simgen_detail::signed_uniform(rng, 1.0, 2.0);
      if (l == 0) {
        const auto bpos = rng.sample_without_replacement(k * k, 3);
        for (int idx : bpos)
          B(idx / k, idx % k) = simgen_detail::signed_uniform(rng, 1.0, 2.0);
      }
    };
    draw_main_pair(0);
    if (H1 == 2) draw_main_pair(1);

    Mat Lambda(p, k);
    for (int j = 0; j < p; ++j)
      for (int q = 0; q < k; ++q) Lambda(j, q) = rng.normal();
    const Vec sigma2 = Vec::Constant(p, 0.25);
    const double phi = 0.5;
    const CompoundSymmetric Phi(T, phi);
    const Mat L = Phi.cholesky();
    const Mat Theta = beta.transpose() * omega;  // k x T

    truth.k = k;
    truth.Lambda = Lambda;
    truth.beta = beta;
    truth.omega = omega;
    truth.B = B;
    truth.W = W;
    truth.sigma2 = sigma2;
    truth.phi = phi;
    truth.eta = Mat(n, k * T);

    for (int i = 0; i < n; ++i) {
      Mat E(k, T);
      for (int q = 0; q < k; ++q) E.row(q) = (L * rng.normal_vec(T)).transpose();
      Mat R(p, T);
      for (int j = 0; j < p; ++j) R.row(j) = 0.5 * (L * rng.normal_vec(T)).transpose();
      const Mat X = Lambda * E + R;
      for (int j = 0; j < p; ++j) data.x.row(i).segment(j * T, T) = X.row(j);
      for (int q = 0; q < k; ++q) truth.eta.row(i).segment(q * T, T) = E.row(q);
      const double m = (Theta.array() * E.array()).sum() +
                       (B.array() * (E * W * E.transpose()).array()).sum();
      data.y[i] = m + rng.normal();
    }

    const InducedCoefficients ic = simgen_detail::factor_truth(
        p, T, k, beta, omega, B, W, Lambda, sigma2, phi);
    truth.alpha0 = ic.alpha0;
    truth.alpha = ic.alpha;
    truth.gamma = ic.gamma;
  } else {
    // Scenario 3: x ~ N(0, CS_p(0.7) (x) CS_T(0.7)); sparse direct
    // coefficients, constant-plus-jitter within exposures and pairs.
    Vec alpha = Vec::Zero(p * T);
    const auto mains = rng.sample_without_replacement(p, std::min(4, p));
    for (int j : mains) {
      const double mean = simgen_detail::signed_uniform(rng, 0.2, 0.4);
      for (int t = 0; t < T; ++t) alpha[j * T + t] = mean + rng.normal(0.0, 0.05);
    }

    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < p; ++a)
      for (int b = a + 1; b < p; ++b) pairs.emplace_back(a, b);
    const int n_pairs = std::min<int>(10, int(pairs.size()));
    const auto sel = rng.sample_without_replacement(int(pairs.size()), n_pairs);
    Mat gamma = Mat::Zero(p * T, p * T);
    for (int idx : sel) {
      const auto [j1, j2] = pairs[idx];
      const double mean = simgen_detail::signed_uniform(rng, 0.05, 0.15);
      for (int t = 0; t < T; ++t) {
        const double c = mean + rng.normal(0.0, 0.01);
        gamma(j1 * T + t, j2 * T + t) += c / 2.0;
        gamma(j2 * T + t, j1 * T + t) += c / 2.0;
      }
    }

    const Mat Lexp = CompoundSymmetric(p, 0.7).cholesky();
    const Mat Ltime = CompoundSymmetric(T, 0.7).cholesky();
    for (int i = 0; i < n; ++i) {
      Mat Z(p, T);
      for (int j = 0; j < p; ++j) Z.row(j) = rng.normal_vec(T).transpose();
      const Mat X = Lexp * Z * Ltime.transpose();
      for (int j = 0; j < p; ++j) data.x.row(i).segment(j * T, T) = X.row(j);
      const Vec xi = data.x.row(i).transpose();
      data.y[i] = alpha.dot(xi) + xi.dot(gamma * xi) + rng.normal();
    }

    truth.alpha = alpha;
    truth.gamma = gamma;
  }

  data.validate();
  truth.cumulative = simgen_detail::cumulative_from_alpha(truth.alpha, p, T);
  return {std::move(data), std::move(truth)};
}

// Expected outcome change when one exposure moves -1 -> +1 at all times,
// everything else held at zero; the quadratic part cancels.
inline Vec truth_cumulative(const SimTruth& truth) {
  if (truth.p < 1 || truth.T < 1 ||
      truth.alpha.size() != Eigen::Index(truth.p) * truth.T)
    throw UsageError("truth_cumulative: truth not populated");
  return simgen_detail::cumulative_from_alpha(truth.alpha, truth.p, truth.T);
}

}  // namespace lowfr
