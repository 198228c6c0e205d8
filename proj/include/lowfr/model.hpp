#pragma once

// Joint model density and analytic gradient, evaluated on the unconstrained
// scale with transform Jacobians included.
//
// Latent factor regression (per subject i, all on standardized data):
//   x_i = (Lambda kron I_T) eta_i + eps_i,   eps_i ~ N(0, Sigma kron Phi)
//   eta_i ~ N(0, I_k kron Phi)
//   y_i ~ N(mu + z_i'c + theta'eta_i + eta_i'(B kron W)eta_i, sigma2_y)
//   theta = vec(sum_l omega_l beta_l'), beta_l in R^k, omega_l in R^T
// with a multiplicative-gamma shrinkage prior across the (beta_l, omega_l)
// levels and a one-level analog on (B, W).  Direct variants regress y on x
// itself with low-rank (or unstructured) coefficients under N(0,10) priors.
//
// Reshaping conventions (all row-major): eta_i -> E_i (k x T), x_i -> X_i
// (p x T), so (Lambda kron I_T) eta_i = Lambda E_i and the interaction term
// is eta'(B kron W)eta = <B, E W E'>_F.

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lowfr/dataset.hpp"
#include "lowfr/errors.hpp"
#include "lowfr/layout.hpp"
#include "lowfr/matrix.hpp"
#include "lowfr/model_spec.hpp"
#include "lowfr/rng.hpp"

namespace lowfr {

namespace density {

inline double normal_lp(double x, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - x * x / (2.0 * var);
}

// Gamma(shape, rate), x > 0.
inline double gamma_lp(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

// Inverse-gamma(shape, scale), s > 0.
inline double inv_gamma_lp(double s, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(s) -
         scale / s;
}

}  // namespace density

namespace detail {

// Recurrence + asymptotic series; ~1e-12 absolute for x > 0, which is all the
// a1/a2 gradient needs.
inline double digamma(double x) {
  double r = 0.0;
  while (x < 6.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  r += std::log(x) - 0.5 * inv;
  r -= inv2 * (1.0 / 12.0 + inv2 * (-1.0 / 120.0 + inv2 * (1.0 / 252.0 +
               inv2 * (-1.0 / 240.0 + inv2 * (1.0 / 132.0)))));
  return r;
}

struct TermAccum {
  std::vector<std::pair<const char*, double>> terms;
  void add(const char* name, double value) { terms.emplace_back(name, value); }
  // First non-finite term name, or nullptr with *total set.
  const char* check(double* total) const {
    double s = 0.0;
    for (const auto& [name, value] : terms) {
      if (!std::isfinite(value)) return name;
      s += value;
    }
    *total = s;
    return nullptr;
  }
};

}  // namespace detail

// Core evaluation.  Returns the log joint density plus Jacobians; on a
// non-finite intermediate returns -inf and names the offending block in
// *bad_block instead of throwing, so the sampler can reject the point.
// grad may be null.  Structural problems (length/dimension mismatch) throw.
inline double log_posterior_impl(const ModelSpec& spec, const ParamLayout& lay,
                                 const ExposureDataset& data, const Vec& u, Vec* grad,
                                 std::string* bad_block) {
  const double NEG_INF = -std::numeric_limits<double>::infinity();
  auto fail = [&](const char* name) {
    if (bad_block) *bad_block = name;
    return NEG_INF;
  };

  if (u.size() != lay.dim) throw UsageError("log_posterior: state length mismatch");
  if (data.n != spec.n || data.p != spec.p || data.T != spec.T ||
      data.n_cov() != spec.n_cov || int(data.mask.size()) != spec.n_missing)
    throw UsageError("log_posterior: dataset does not match ModelSpec dimensions");

  // Constrained view; saturation is a soft failure so the sampler can back off.
  Vec v = u;
  double jac = 0.0;
  for (const auto& b : lay.blocks) {
    if (b.tf == Transform::Linear) continue;
    for (int s = b.offset; s < b.offset + b.size(); ++s) {
      if (!(std::abs(u[s]) <= 700.0)) return fail("transform");
      if (b.tf == Transform::Log) {
        v[s] = std::exp(u[s]);
        jac += u[s];
      } else {
        const double ph = 1.0 / (1.0 + std::exp(-u[s]));
        v[s] = ph;
        jac += std::log(ph * (1.0 - ph));
      }
    }
  }

  const HyperParams& hp = spec.hyper;
  detail::TermAccum acc;
  acc.add("jacobian", jac);

  Vec gc;  // gradient w.r.t. constrained values, chain-ruled at the end
  if (grad) gc = Vec::Zero(lay.dim);
  auto gptr = [&](Blk id) { return gc.data() + lay.at(id).offset; };

  const int n = spec.n, p = spec.p, T = spec.T, c = spec.n_cov;
  const double mu = v[lay.at(Blk::Mu).offset];
  const double sigma2_y = v[lay.at(Blk::LogSigma2y).offset];
  const Vec cvec = c > 0 ? Vec(v.segment(lay.at(Blk::Cov).offset, c)) : Vec();

  {
    double lp = density::normal_lp(mu, hp.intercept_cov_var);
    for (int m = 0; m < c; ++m) lp += density::normal_lp(cvec[m], hp.intercept_cov_var);
    acc.add("intercept_covariate_prior", lp);
    acc.add("variance_prior_y", density::inv_gamma_lp(sigma2_y, hp.ig_shape, hp.ig_rate));
    if (grad) {
      gc[lay.at(Blk::Mu).offset] -= mu / hp.intercept_cov_var;
      for (int m = 0; m < c; ++m) gptr(Blk::Cov)[m] -= cvec[m] / hp.intercept_cov_var;
      gc[lay.at(Blk::LogSigma2y).offset] +=
          -(hp.ig_shape + 1.0) / sigma2_y + hp.ig_rate / (sigma2_y * sigma2_y);
    }
  }

  auto finish = [&](void) -> double {
    double total = 0.0;
    if (const char* bad = acc.check(&total)) return fail(bad);
    if (grad) {
      *grad = gc;
      for (const auto& b : lay.blocks) {
        if (b.tf == Transform::Linear) continue;
        for (int s = b.offset; s < b.offset + b.size(); ++s) {
          if (b.tf == Transform::Log) {
            (*grad)[s] = gc[s] * v[s] + 1.0;
          } else {
            const double ph = v[s];
            (*grad)[s] = gc[s] * ph * (1.0 - ph) + (1.0 - 2.0 * ph);
          }
        }
      }
      if (!grad->allFinite()) return fail("gradient");
    }
    return total;
  };

  if (spec.is_direct()) {
    const int R = spec.rank;
    const double cv = hp.intercept_cov_var;
    Vec theta(p * T);
    if (spec.variant == Variant::DirectRank) {
      detail::MapMat beta(v.data() + lay.at(Blk::Beta).offset, R, p);
      detail::MapMat omega(v.data() + lay.at(Blk::Omega).offset, R, T);
      detail::MapMutMat(theta.data(), p, T) = beta.transpose() * omega;
      double lp = 0.0;
      for (int i = 0; i < R * p; ++i) lp += density::normal_lp(beta.data()[i], cv);
      for (int i = 0; i < R * T; ++i) lp += density::normal_lp(omega.data()[i], cv);
      acc.add("coefficient_prior", lp);
    } else {
      theta = v.segment(lay.at(Blk::Theta).offset, p * T);
      double lp = 0.0;
      for (int i = 0; i < p * T; ++i) lp += density::normal_lp(theta[i], cv);
      acc.add("coefficient_prior", lp);
    }

    Vec resid;
    if (n > 0) {
      Vec m = Vec::Constant(n, mu) + data.x * theta;
      if (c > 0) m += data.z * cvec;
      resid = data.y - m;
      acc.add("y_likelihood", -0.5 * n * std::log(2.0 * M_PI * sigma2_y) -
                                  resid.squaredNorm() / (2.0 * sigma2_y));
    }

    if (grad) {
      Vec gtheta = Vec::Zero(p * T);
      if (n > 0) {
        const Vec e = resid / sigma2_y;
        gc[lay.at(Blk::Mu).offset] += e.sum();
        if (c > 0) Eigen::Map<Vec>(gptr(Blk::Cov), c) += data.z.transpose() * e;
        gtheta = data.x.transpose() * e;
        gc[lay.at(Blk::LogSigma2y).offset] +=
            -0.5 * n / sigma2_y + resid.squaredNorm() / (2.0 * sigma2_y * sigma2_y);
      }
      if (spec.variant == Variant::DirectRank) {
        detail::MapMat beta(v.data() + lay.at(Blk::Beta).offset, R, p);
        detail::MapMat omega(v.data() + lay.at(Blk::Omega).offset, R, T);
        detail::MapMat G(gtheta.data(), p, T);
        detail::MapMutMat(gptr(Blk::Beta), R, p) = omega * G.transpose() - beta / cv;
        detail::MapMutMat(gptr(Blk::Omega), R, T) = beta * G - omega / cv;
      } else {
        Eigen::Map<Vec>(gptr(Blk::Theta), p * T) += gtheta - theta / cv;
      }
    }
    return finish();
  }

  // Latent factor variants.
  const int k = spec.k, H1 = spec.h1(), kT = k * T;
  const bool sexint = spec.variant == Variant::LowfrSexInt;

  detail::MapMat beta(v.data() + lay.at(Blk::Beta).offset, H1, k);
  detail::MapMat omega(v.data() + lay.at(Blk::Omega).offset, H1, T);
  detail::MapMat xi_beta(v.data() + lay.at(Blk::LogXiBeta).offset, H1, k);
  detail::MapMat xi_omega(v.data() + lay.at(Blk::LogXiOmega).offset, H1, T);
  const Eigen::Map<const Vec> delta(v.data() + lay.at(Blk::LogDelta).offset, H1);
  const double a1 = v[lay.at(Blk::LogA1).offset];
  const double a2 = v[lay.at(Blk::LogA2).offset];
  detail::MapMat B(v.data() + lay.at(Blk::B).offset, k, k);
  detail::MapMat W(v.data() + lay.at(Blk::W).offset, T, T);
  detail::MapMat xi_B(v.data() + lay.at(Blk::LogXiB).offset, k, k);
  detail::MapMat xi_W(v.data() + lay.at(Blk::LogXiW).offset, T, T);
  const double delta_int = v[lay.at(Blk::LogDeltaInt).offset];
  const double a_int = v[lay.at(Blk::LogAInt).offset];
  detail::MapMat Lambda(v.data() + lay.at(Blk::Lambda).offset, p, k);
  const Eigen::Map<const Vec> sigma2(v.data() + lay.at(Blk::LogSigma2).offset, p);
  const double phi = v[lay.at(Blk::LogitPhi).offset];

  Vec tau(H1);
  {
    double run = 1.0;
    for (int l = 0; l < H1; ++l) tau[l] = run *= delta[l];
  }
  if (!tau.allFinite()) return fail("coef_mgp_prior");

  // phi is logit-constrained to (0,1), but the sigmoid saturates to exactly
  // 1.0 in floating point near u ~ 37, outside the PD range.
  if (!(phi > 0.0 && phi < 1.0)) return fail("transform");
  const CompoundSymmetric Phi_cs(T, phi);
  const Mat PhiInv = Phi_cs.inverse();
  const double logdetPhi = Phi_cs.log_det();

  const Mat Theta = beta.transpose() * omega;  // k x T
  Vec beta_int, omega_int;
  Mat ThetaInt;
  if (sexint) {
    beta_int = v.segment(lay.at(Blk::BetaInt).offset, k);
    omega_int = v.segment(lay.at(Blk::OmegaInt).offset, T);
    ThetaInt = beta_int * omega_int.transpose();
  }
  const Vec sigma2_inv = sigma2.cwiseInverse();

  // Masked entries grouped by subject as (flat x column, imputation slot).
  std::vector<std::vector<std::pair<int, int>>> masked_by_subject;
  if (spec.n_missing > 0) {
    masked_by_subject.resize(n);
    for (int s = 0; s < spec.n_missing; ++s)
      masked_by_subject[data.mask[s].i].push_back(
          {data.mask[s].j * T + data.mask[s].t, s});
  }
  const int ximp_off = spec.n_missing > 0 ? lay.at(Blk::Ximp).offset : 0;
  const int eta_off = n > 0 ? lay.at(Blk::Eta).offset : 0;

  double xquad = 0.0, etaquad = 0.0, yss = 0.0, sum_e = 0.0;
  Mat M_phi = Mat::Zero(T, T);  // sum_i R'Sigma^{-1}R + E'E, for the phi gradient
  Mat gLambda = Mat::Zero(p, k);
  Mat gTheta = Mat::Zero(k, T);  // sum_i e_i E_i
  Mat gThetaInt = Mat::Zero(k, T);
  Mat gB = Mat::Zero(k, k), gW = Mat::Zero(T, T);
  Vec r_sigma = Vec::Zero(p);  // sum_i (R Phi^{-1} R')_jj / sigma2_j
  Vec gcov = Vec::Zero(c);

  Mat Xbuf(p, T), E(k, T), Rm(p, T), SR(p, T), S(p, T), EW(k, T), EWt(k, T), EPhiInv(k, T);
  for (int i = 0; i < n; ++i) {
    E = detail::MapMat(u.data() + eta_off + Eigen::Index(i) * kT, k, T);
    Xbuf = detail::MapMat(data.x.data() + Eigen::Index(i) * p * T, p, T);
    const bool has_mask = spec.n_missing > 0 && !masked_by_subject[i].empty();
    if (has_mask)
      for (const auto& [col, slot] : masked_by_subject[i])
        Xbuf.data()[col] = u[ximp_off + slot];

    EW = E * W;
    double m = mu + (Theta.cwiseProduct(E)).sum() + (B.cwiseProduct(EW * E.transpose())).sum();
    if (c > 0) m += data.z.row(i).dot(cvec);
    double si = 0.0;
    if (sexint) {
      si = data.z(i, spec.sex_col);
      m += si * (ThetaInt.cwiseProduct(E)).sum();
    }
    const double r = data.y[i] - m;
    yss += r * r;

    Rm = Xbuf - Lambda * E;
    SR = sigma2_inv.asDiagonal() * Rm;
    S = SR * PhiInv;
    xquad += (Rm.cwiseProduct(S)).sum();
    EPhiInv = E * PhiInv;
    etaquad += (E.cwiseProduct(EPhiInv)).sum();

    if (grad) {
      const double e = r / sigma2_y;
      sum_e += e;
      if (c > 0) gcov += e * data.z.row(i).transpose();
      gTheta += e * E;
      if (sexint) gThetaInt += (e * si) * E;
      gB += e * (EW * E.transpose());
      gW += e * (E.transpose() * B * E);
      gLambda += S * E.transpose();
      r_sigma += (Rm.cwiseProduct(S)).rowwise().sum();
      M_phi += Rm.transpose() * SR + E.transpose() * E;

      EWt = E * W.transpose();
      detail::MapMutMat gE(gc.data() + eta_off + Eigen::Index(i) * kT, k, T);
      gE = e * (Theta + B * EWt + B.transpose() * EW) + Lambda.transpose() * S - EPhiInv;
      if (sexint) gE += (e * si) * ThetaInt;
      if (has_mask)
        for (const auto& [col, slot] : masked_by_subject[i])
          gc[ximp_off + slot] = -S.data()[col];
    }
  }

  if (n > 0) {
    acc.add("y_likelihood",
            -0.5 * n * std::log(2.0 * M_PI * sigma2_y) - yss / (2.0 * sigma2_y));
    acc.add("x_likelihood", -0.5 * n * p * T * std::log(2.0 * M_PI) -
                                0.5 * n * T * sigma2.array().log().sum() -
                                0.5 * n * p * logdetPhi - 0.5 * xquad);
    acc.add("eta_prior", -0.5 * n * kT * std::log(2.0 * M_PI) -
                             0.5 * n * k * logdetPhi - 0.5 * etaquad);
    if (grad) {
      gc[lay.at(Blk::Mu).offset] += sum_e;
      if (c > 0) Eigen::Map<Vec>(gptr(Blk::Cov), c) += gcov;
      gc[lay.at(Blk::LogSigma2y).offset] +=
          -0.5 * n / sigma2_y + yss / (2.0 * sigma2_y * sigma2_y);
    }
  }

  // Coefficient MGP prior.
  {
    double lp = 0.0;
    Vec S_l = Vec::Zero(H1);  // sum of xi-weighted squares at level l
    for (int l = 0; l < H1; ++l) {
      for (int j = 0; j < k; ++j) {
        const double prec = xi_beta(l, j) * tau[l];
        lp += 0.5 * std::log(prec) - 0.5 * std::log(2.0 * M_PI) -
              0.5 * prec * beta(l, j) * beta(l, j);
        lp += density::gamma_lp(xi_beta(l, j), hp.xi_shape, hp.xi_rate);
        S_l[l] += xi_beta(l, j) * beta(l, j) * beta(l, j);
      }
      for (int t = 0; t < T; ++t) {
        const double prec = xi_omega(l, t) * tau[l];
        lp += 0.5 * std::log(prec) - 0.5 * std::log(2.0 * M_PI) -
              0.5 * prec * omega(l, t) * omega(l, t);
        lp += density::gamma_lp(xi_omega(l, t), hp.xi_shape, hp.xi_rate);
        S_l[l] += xi_omega(l, t) * omega(l, t) * omega(l, t);
      }
      lp += density::gamma_lp(delta[l], l == 0 ? a1 : a2, 1.0);
    }
    lp += density::gamma_lp(a1, hp.a_shape, hp.a_rate);
    lp += density::gamma_lp(a2, hp.a_shape, hp.a_rate);
    acc.add("coef_mgp_prior", lp);

    if (grad) {
      detail::MapMutMat gbeta(gptr(Blk::Beta), H1, k);
      detail::MapMutMat gomega(gptr(Blk::Omega), H1, T);
      gbeta = omega * gTheta.transpose();
      gomega = beta * gTheta;
      double* gxb = gptr(Blk::LogXiBeta);
      double* gxo = gptr(Blk::LogXiOmega);
      for (int l = 0; l < H1; ++l) {
        for (int j = 0; j < k; ++j) {
          gbeta(l, j) -= xi_beta(l, j) * tau[l] * beta(l, j);
          gxb[l * k + j] = 0.5 - 0.5 * xi_beta(l, j) * tau[l] * beta(l, j) * beta(l, j) +
                           (hp.xi_shape - 1.0) - hp.xi_rate * xi_beta(l, j);
        }
        for (int t = 0; t < T; ++t) {
          gomega(l, t) -= xi_omega(l, t) * tau[l] * omega(l, t);
          gxo[l * T + t] = 0.5 -
                           0.5 * xi_omega(l, t) * tau[l] * omega(l, t) * omega(l, t) +
                           (hp.xi_shape - 1.0) - hp.xi_rate * xi_omega(l, t);
        }
      }
      // The xi slots are log-scale: the values above are d/d(log xi) minus the
      // +1 Jacobian, which finish() adds; so pre-divide by xi to let the
      // generic chain rule multiply it back.
      for (int i = 0; i < H1 * k; ++i) gxb[i] /= xi_beta.data()[i];
      for (int i = 0; i < H1 * T; ++i) gxo[i] /= xi_omega.data()[i];

      double* gdelta = gptr(Blk::LogDelta);
      double suffix = 0.0;
      for (int l = H1 - 1; l >= 0; --l) {
        suffix += 0.5 * (k + T) - 0.5 * tau[l] * S_l[l];
        const double a = l == 0 ? a1 : a2;
        gdelta[l] = (suffix + a - 1.0) / delta[l] - 1.0;
      }
      double ga1 = std::log(delta[0]) - detail::digamma(a1) + (hp.a_shape - 1.0) / a1 -
                   hp.a_rate;
      double ga2 = (hp.a_shape - 1.0) / a2 - hp.a_rate;
      for (int l = 1; l < H1; ++l) ga2 += std::log(delta[l]) - detail::digamma(a2);
      gc[lay.at(Blk::LogA1).offset] = ga1;
      gc[lay.at(Blk::LogA2).offset] = ga2;
    }
  }

  // Interaction MGP (one level, tau_int = delta_int).
  {
    double lp = 0.0, S_int = 0.0;
    for (int q = 0; q < k * k; ++q) {
      const double b = B.data()[q], xb = xi_B.data()[q];
      lp += 0.5 * std::log(xb * delta_int) - 0.5 * std::log(2.0 * M_PI) -
            0.5 * xb * delta_int * b * b;
      lp += density::gamma_lp(xb, hp.xi_shape, hp.xi_rate);
      S_int += xb * b * b;
    }
    for (int s = 0; s < T * T; ++s) {
      const double w = W.data()[s], xw = xi_W.data()[s];
      lp += 0.5 * std::log(xw * delta_int) - 0.5 * std::log(2.0 * M_PI) -
            0.5 * xw * delta_int * w * w;
      lp += density::gamma_lp(xw, hp.xi_shape, hp.xi_rate);
      S_int += xw * w * w;
    }
    lp += density::gamma_lp(delta_int, a_int, 1.0);
    lp += density::gamma_lp(a_int, hp.a_shape, hp.a_rate);
    acc.add("interaction_mgp_prior", lp);

    if (grad) {
      detail::MapMutMat gBm(gptr(Blk::B), k, k);
      detail::MapMutMat gWm(gptr(Blk::W), T, T);
      gBm = gB - delta_int * xi_B.cwiseProduct(B);
      gWm = gW - delta_int * xi_W.cwiseProduct(W);
      double* gxB = gptr(Blk::LogXiB);
      double* gxW = gptr(Blk::LogXiW);
      for (int q = 0; q < k * k; ++q) {
        const double b = B.data()[q], xb = xi_B.data()[q];
        gxB[q] = (0.5 - 0.5 * xb * delta_int * b * b + (hp.xi_shape - 1.0) -
                  hp.xi_rate * xb) / xb;
      }
      for (int s = 0; s < T * T; ++s) {
        const double w = W.data()[s], xw = xi_W.data()[s];
        gxW[s] = (0.5 - 0.5 * xw * delta_int * w * w + (hp.xi_shape - 1.0) -
                  hp.xi_rate * xw) / xw;
      }
      gc[lay.at(Blk::LogDeltaInt).offset] =
          (0.5 * (k * k + T * T) - 0.5 * delta_int * S_int + a_int - 1.0) / delta_int -
          1.0;
      gc[lay.at(Blk::LogAInt).offset] = std::log(delta_int) - detail::digamma(a_int) +
                                        (hp.a_shape - 1.0) / a_int - hp.a_rate;
    }
  }

  if (sexint) {
    const Eigen::Map<const Vec> xi_bi(v.data() + lay.at(Blk::LogXiBetaInt).offset, k);
    const Eigen::Map<const Vec> xi_oi(v.data() + lay.at(Blk::LogXiOmegaInt).offset, T);
    const double tau2 = v[lay.at(Blk::LogTauInt2).offset];
    double lp = 0.0, S_si = 0.0;
    for (int j = 0; j < k; ++j) {
      lp += 0.5 * std::log(xi_bi[j] * tau2) - 0.5 * std::log(2.0 * M_PI) -
            0.5 * xi_bi[j] * tau2 * beta_int[j] * beta_int[j];
      lp += density::gamma_lp(xi_bi[j], hp.xi_shape, hp.xi_rate);
      S_si += xi_bi[j] * beta_int[j] * beta_int[j];
    }
    for (int t = 0; t < T; ++t) {
      lp += 0.5 * std::log(xi_oi[t] * tau2) - 0.5 * std::log(2.0 * M_PI) -
            0.5 * xi_oi[t] * tau2 * omega_int[t] * omega_int[t];
      lp += density::gamma_lp(xi_oi[t], hp.xi_shape, hp.xi_rate);
      S_si += xi_oi[t] * omega_int[t] * omega_int[t];
    }
    // Single shrinkage scale for the group-interaction level; Gamma(2,1) with
    // fixed shape (no second-level shape slot in the layout).
    lp += density::gamma_lp(tau2, 2.0, 1.0);
    acc.add("sex_interaction_prior", lp);

    if (grad) {
      Eigen::Map<Vec> gbi(gptr(Blk::BetaInt), k);
      Eigen::Map<Vec> goi(gptr(Blk::OmegaInt), T);
      gbi = gThetaInt * omega_int - tau2 * xi_bi.cwiseProduct(beta_int);
      goi = gThetaInt.transpose() * beta_int - tau2 * xi_oi.cwiseProduct(omega_int);
      double* gxbi = gptr(Blk::LogXiBetaInt);
      double* gxoi = gptr(Blk::LogXiOmegaInt);
      for (int j = 0; j < k; ++j)
        gxbi[j] = (0.5 - 0.5 * xi_bi[j] * tau2 * beta_int[j] * beta_int[j] +
                   (hp.xi_shape - 1.0) - hp.xi_rate * xi_bi[j]) / xi_bi[j];
      for (int t = 0; t < T; ++t)
        gxoi[t] = (0.5 - 0.5 * xi_oi[t] * tau2 * omega_int[t] * omega_int[t] +
                   (hp.xi_shape - 1.0) - hp.xi_rate * xi_oi[t]) / xi_oi[t];
      gc[lay.at(Blk::LogTauInt2).offset] =
          (0.5 * (k + T) - 0.5 * tau2 * S_si + 2.0 - 1.0) / tau2 - 1.0;
    }
  }

  // Loadings and x variances.
  {
    double lp = 0.0;
    for (int i = 0; i < p * k; ++i)
      lp += density::normal_lp(Lambda.data()[i], hp.loading_var);
    acc.add("loading_prior", lp);
    double lpv = 0.0;
    for (int j = 0; j < p; ++j)
      lpv += density::inv_gamma_lp(sigma2[j], hp.ig_shape, hp.ig_rate);
    acc.add("variance_prior_x", lpv);
    if (grad) {
      detail::MapMutMat(gptr(Blk::Lambda), p, k) = gLambda - Lambda / hp.loading_var;
      double* gs = gptr(Blk::LogSigma2);
      for (int j = 0; j < p; ++j)
        gs[j] = -0.5 * n * T / sigma2[j] + 0.5 * r_sigma[j] / sigma2[j] -
                (hp.ig_shape + 1.0) / sigma2[j] + hp.ig_rate / (sigma2[j] * sigma2[j]);
    }
  }

  // phi: Uniform(0,1) contributes no density term; dPhi/dphi = J - I.
  if (grad) {
    double gphi = 0.0;
    if (n > 0 && T > 1) {
      const double tr_logdet = PhiInv.sum() - PhiInv.trace();
      const Mat JmI = Mat::Ones(T, T) - Mat::Identity(T, T);
      const Mat K = PhiInv * JmI * PhiInv;
      gphi = -0.5 * n * (p + k) * tr_logdet + 0.5 * (K.cwiseProduct(M_phi)).sum();
    }
    gc[lay.at(Blk::LogitPhi).offset] = gphi;
  }

  return finish();
}

inline double log_posterior(const ModelSpec& spec, const ExposureDataset& data,
                            const Vec& u) {
  const ParamLayout lay = build_layout(spec);
  std::string bad;
  const double lp = log_posterior_impl(spec, lay, data, u, nullptr, &bad);
  if (!std::isfinite(lp) && !bad.empty())
    throw EvaluationError("log_posterior: non-finite value in block '" + bad + "'");
  return lp;
}

inline Vec grad_log_posterior(const ModelSpec& spec, const ExposureDataset& data,
                              const Vec& u) {
  const ParamLayout lay = build_layout(spec);
  std::string bad;
  Vec g(lay.dim);
  const double lp = log_posterior_impl(spec, lay, data, u, &g, &bad);
  if (!std::isfinite(lp) && !bad.empty())
    throw EvaluationError("grad_log_posterior: non-finite value in block '" + bad + "'");
  return g;
}

// Subject-level outcome means from one constrained draw; used by predictive
// checks.  For LOWFR_SEX_INT the group coefficient enters through the
// designated covariate exactly as in the likelihood.
inline Vec y_mean_per_subject(const ModelSpec& spec, const ExposureDataset& data,
                              const Vec& constrained) {
  const ParamLayout lay = build_layout(spec);
  if (constrained.size() != lay.dim)
    throw UsageError("y_mean_per_subject: state length mismatch");
  if (spec.is_direct())
    throw UsageError("y_mean_per_subject: latent-factor variants only");
  const int n = spec.n, T = spec.T, k = spec.k, H1 = spec.h1(), kT = k * T;
  const Vec& v = constrained;
  detail::MapMat beta(v.data() + lay.at(Blk::Beta).offset, H1, k);
  detail::MapMat omega(v.data() + lay.at(Blk::Omega).offset, H1, T);
  detail::MapMat B(v.data() + lay.at(Blk::B).offset, k, k);
  detail::MapMat W(v.data() + lay.at(Blk::W).offset, T, T);
  const double mu = v[lay.at(Blk::Mu).offset];
  const Mat Theta = beta.transpose() * omega;
  Mat ThetaInt;
  if (spec.variant == Variant::LowfrSexInt) {
    const Eigen::Map<const Vec> bi(v.data() + lay.at(Blk::BetaInt).offset, k);
    const Eigen::Map<const Vec> oi(v.data() + lay.at(Blk::OmegaInt).offset, T);
    ThetaInt = bi * oi.transpose();
  }
  const int c = spec.n_cov;
  const Vec cvec = c > 0 ? Vec(v.segment(lay.at(Blk::Cov).offset, c)) : Vec();
  const int eta_off = n > 0 ? lay.at(Blk::Eta).offset : 0;

  Vec m(n);
  for (int i = 0; i < n; ++i) {
    const detail::MapMat E(v.data() + eta_off + Eigen::Index(i) * kT, k, T);
    double mi = mu + (Theta.cwiseProduct(E)).sum() +
                (B.cwiseProduct((E * W) * E.transpose())).sum();
    if (c > 0) mi += data.z.row(i).dot(cvec);
    if (spec.variant == Variant::LowfrSexInt)
      mi += data.z(i, spec.sex_col) * (ThetaInt.cwiseProduct(E)).sum();
    m[i] = mi;
  }
  return m;
}

// Draw from the full prior on the unconstrained scale.  Deterministic given
// the seed; masked x slots are filled from the model's own generative step so
// the draw is a sample from the complete joint prior.
inline Vec prior_sample(const ModelSpec& spec, std::uint64_t seed) {
  const ParamLayout lay = build_layout(spec);
  RngStream rng(seed, 0x9d5f);
  Vec v = Vec::Zero(lay.dim);
  const HyperParams& hp = spec.hyper;
  const double sd_ic = std::sqrt(hp.intercept_cov_var);

  auto fill_normal = [&](Blk id, double sd) {
    if (!lay.has(id)) return;
    const Block& b = lay.at(id);
    for (int s = b.offset; s < b.offset + b.size(); ++s) v[s] = rng.normal(0.0, sd);
  };

  v[lay.at(Blk::Mu).offset] = rng.normal(0.0, sd_ic);
  fill_normal(Blk::Cov, sd_ic);
  v[lay.at(Blk::LogSigma2y).offset] = rng.inv_gamma(hp.ig_shape, hp.ig_rate);

  if (spec.is_direct()) {
    fill_normal(Blk::Beta, sd_ic);
    fill_normal(Blk::Omega, sd_ic);
    fill_normal(Blk::Theta, sd_ic);
    return to_unconstrained(spec, v);
  }

  const int p = spec.p, T = spec.T, k = spec.k, H1 = spec.h1();
  const double a1 = rng.gamma(hp.a_shape, hp.a_rate);
  const double a2 = rng.gamma(hp.a_shape, hp.a_rate);
  v[lay.at(Blk::LogA1).offset] = a1;
  v[lay.at(Blk::LogA2).offset] = a2;
  Vec tau(H1);
  double run = 1.0;
  for (int l = 0; l < H1; ++l) {
    const double d = rng.gamma(l == 0 ? a1 : a2, 1.0);
    v[lay.at(Blk::LogDelta).offset + l] = d;
    tau[l] = run *= d;
  }
  auto fill_mgp = [&](Blk coef, Blk scale, int rows, int cols, const Vec& tauv) {
    const Block& bc = lay.at(coef);
    const Block& bs = lay.at(scale);
    for (int l = 0; l < rows; ++l)
      for (int j = 0; j < cols; ++j) {
        const double xi = rng.gamma(hp.xi_shape, hp.xi_rate);
        v[bs.offset + l * cols + j] = xi;
        v[bc.offset + l * cols + j] = rng.normal(0.0, 1.0 / std::sqrt(xi * tauv[l]));
      }
  };
  fill_mgp(Blk::Beta, Blk::LogXiBeta, H1, k, tau);
  fill_mgp(Blk::Omega, Blk::LogXiOmega, H1, T, tau);

  const double a_int = rng.gamma(hp.a_shape, hp.a_rate);
  const double delta_int = rng.gamma(a_int, 1.0);
  v[lay.at(Blk::LogAInt).offset] = a_int;
  v[lay.at(Blk::LogDeltaInt).offset] = delta_int;
  const Vec tau_int = Vec::Constant(std::max(k, T), delta_int);
  fill_mgp(Blk::B, Blk::LogXiB, k, k, tau_int);
  fill_mgp(Blk::W, Blk::LogXiW, T, T, tau_int);

  fill_normal(Blk::Lambda, std::sqrt(hp.loading_var));
  for (int j = 0; j < p; ++j)
    v[lay.at(Blk::LogSigma2).offset + j] = rng.inv_gamma(hp.ig_shape, hp.ig_rate);
  const double phi = rng.uniform();
  v[lay.at(Blk::LogitPhi).offset] = phi;

  if (spec.variant == Variant::LowfrSexInt) {
    const double tau2 = rng.gamma(2.0, 1.0);
    v[lay.at(Blk::LogTauInt2).offset] = tau2;
    const Block& bbi = lay.at(Blk::BetaInt);
    const Block& bxi = lay.at(Blk::LogXiBetaInt);
    for (int j = 0; j < k; ++j) {
      const double xi = rng.gamma(hp.xi_shape, hp.xi_rate);
      v[bxi.offset + j] = xi;
      v[bbi.offset + j] = rng.normal(0.0, 1.0 / std::sqrt(xi * tau2));
    }
    const Block& boi = lay.at(Blk::OmegaInt);
    const Block& bxo = lay.at(Blk::LogXiOmegaInt);
    for (int t = 0; t < T; ++t) {
      const double xi = rng.gamma(hp.xi_shape, hp.xi_rate);
      v[bxo.offset + t] = xi;
      v[boi.offset + t] = rng.normal(0.0, 1.0 / std::sqrt(xi * tau2));
    }
  }

  // Latent factors and imputed entries from the generative model.
  const CompoundSymmetric Phi_cs(T, phi);
  const Mat L = Phi_cs.cholesky();
  if (spec.n > 0) {
    const Block& be = lay.at(Blk::Eta);
    for (int i = 0; i < spec.n; ++i) {
      Mat Z(k, T);
      for (int q = 0; q < k * T; ++q) Z.data()[q] = rng.normal();
      detail::MapMutMat(v.data() + be.offset + Eigen::Index(i) * k * T, k, T) =
          Z * L.transpose();
    }
  }
  if (spec.n_missing > 0) {
    // The layout carries only the count of masked slots, not their subject
    // structure, so these start as standard normals on the standardized
    // scale; the sampler owns them from the first transition on.
    const Block& bx = lay.at(Blk::Ximp);
    for (int s = 0; s < spec.n_missing; ++s) v[bx.offset + s] = rng.normal();
  }
  return to_unconstrained(spec, v);
}

// Number of factors by the cumulative singular-value rule on the (nT) x p
// matrix of stacked time slices.  Missing entries are mean-imputed per column
// first (k selection is preprocessing, not inference).
inline int select_k(const ExposureDataset& data) {
  if (data.n < 1) throw UsageError("select_k: empty tensor");
  const int n = data.n, p = data.p, T = data.T;
  Mat stacked(Eigen::Index(n) * T, p);
  for (int j = 0; j < p; ++j)
    for (int t = 0; t < T; ++t) {
      const Eigen::Index col = data.xcol(j, t);
      double mean, sd;
      int n_obs;
      detail::mean_sd_observed(data.x, col, &mean, &sd, &n_obs);
      if (n_obs < 1) throw UsageError("select_k: column " + data.xcol_name(j, t) +
                                      " has no observed values");
      for (int i = 0; i < n; ++i) {
        const double val = data.x(i, col);
        stacked(Eigen::Index(i) * T + t, j) = std::isnan(val) ? mean : val;
      }
    }
  Eigen::JacobiSVD<Mat> svd(stacked);
  const Vec sv = svd.singularValues();
  const double total = sv.sum();
  if (!(total > 0)) throw UsageError("select_k: zero data matrix");
  double cum = 0.0;
  for (int j = 0; j < sv.size(); ++j) {
    cum += sv[j];
    // Strictly above 0.9; a ratio at the boundary (up to fp noise) does not
    // count, so exact ties increment k.
    if (cum / total > 0.9 + 1e-12) return j + 1;
  }
  return int(sv.size());
}

}  // namespace lowfr
