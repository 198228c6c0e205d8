#pragma once

// Correlated quadratic regression baseline: y on all pT measurements plus all
// pairwise products, with compound-symmetric coefficient priors within each
// exposure (mains) and within each exposure pair (interactions).

#include <cmath>
#include <string>
#include <vector>

#include "lowfr/dataset.hpp"
#include "lowfr/errors.hpp"
#include "lowfr/induced.hpp"
#include "lowfr/matrix.hpp"
#include "lowfr/model.hpp"
#include "lowfr/nuts.hpp"
#include "lowfr/rng.hpp"

namespace lowfr {

struct CqrTerm {
  bool main;
  int j1, t1;
  int j2, t2;  // -1 for main terms
};

struct CqrDesign {
  int p = 0, T = 0;
  std::vector<CqrTerm> terms;
  Mat X;           // n x m
  int n_main = 0;  // = pT; mains first

  int m() const { return int(terms.size()); }

  // Block structure of the coefficient prior: (offset, size) per CS block.
  std::vector<std::pair<int, int>> prior_blocks() const {
    std::vector<std::pair<int, int>> blocks;
    for (int j = 0; j < p; ++j) blocks.emplace_back(j * T, T);
    int off = n_main;
    int i = n_main;
    while (i < m()) {
      const int j1 = terms[i].j1, j2 = terms[i].j2;
      int len = 0;
      while (i + len < m() && terms[i + len].j1 == j1 && terms[i + len].j2 == j2) ++len;
      blocks.emplace_back(off, len);
      off += len;
      i += len;
    }
    return blocks;
  }
};

// Canonical term order: MAIN(j,t) lexicographic; then for j1 = 1..p,
// j2 = 1..j1: same-exposure blocks use t2 <= t1, cross blocks all (t1,t2).
inline CqrDesign build_design(const ExposureDataset& data) {
  if (!data.mask.empty())
    throw UsageError("build_design: data has missing entries; impute first");
  for (int i = 0; i < data.n; ++i)
    for (int c = 0; c < data.p * data.T; ++c)
      if (std::isnan(data.x(i, c)))
        throw UsageError("build_design: NaN in exposure matrix");

  CqrDesign d;
  d.p = data.p;
  d.T = data.T;
  for (int j = 0; j < d.p; ++j)
    for (int t = 0; t < d.T; ++t) d.terms.push_back({true, j, t, -1, -1});
  d.n_main = int(d.terms.size());
  for (int j1 = 0; j1 < d.p; ++j1)
    for (int j2 = 0; j2 <= j1; ++j2) {
      if (j1 == j2) {
        for (int t1 = 0; t1 < d.T; ++t1)
          for (int t2 = 0; t2 <= t1; ++t2) d.terms.push_back({false, j1, t1, j2, t2});
      } else {
        for (int t1 = 0; t1 < d.T; ++t1)
          for (int t2 = 0; t2 < d.T; ++t2) d.terms.push_back({false, j1, t1, j2, t2});
      }
    }

  d.X = Mat(data.n, d.m());
  for (int i = 0; i < data.n; ++i)
    for (int c = 0; c < d.m(); ++c) {
      const CqrTerm& t = d.terms[c];
      d.X(i, c) = t.main ? data.x(i, data.xcol(t.j1, t.t1))
                         : data.x(i, data.xcol(t.j1, t.t1)) *
                               data.x(i, data.xcol(t.j2, t.t2));
    }
  return d;
}

// Any (j1,t1,j2,t2) maps to its canonical stored term.
inline CqrTerm canonical_int(int j1, int t1, int j2, int t2) {
  if (j2 > j1 || (j1 == j2 && t2 > t1)) {
    std::swap(j1, j2);
    std::swap(t1, t2);
  }
  return {false, j1, t1, j2, t2};
}

// Dense block-diagonal prior covariance over all m coefficients.
inline Mat cqr_prior_covariance(const CqrDesign& d, double nu_main, double nu_int,
                                double psi_main, double psi_int) {
  if (!(nu_main > 0.0 && nu_int > 0.0))
    throw DomainError("cqr_prior_covariance: variances must be positive");
  if (!(psi_main >= 0.0 && psi_main < 1.0 && psi_int >= 0.0 && psi_int < 1.0))
    throw DomainError("cqr_prior_covariance: psi must lie in [0,1)");
  Mat cov = Mat::Zero(d.m(), d.m());
  for (const auto& [off, size] : d.prior_blocks()) {
    const bool is_main = off < d.n_main;
    const double nu = is_main ? nu_main : nu_int;
    const double psi = is_main ? psi_main : psi_int;
    for (int a = 0; a < size; ++a)
      for (int b = 0; b < size; ++b)
        cov(off + a, off + b) = nu * (a == b ? 1.0 : psi);
  }
  return cov;
}

// Mean-impute masked entries per exposure column; returns a complete copy.
inline ExposureDataset cqr_impute_means(const ExposureDataset& data) {
  ExposureDataset out = data;
  for (int c = 0; c < data.p * data.T; ++c) {
    double mean, sd;
    int n_obs;
    detail::mean_sd_observed(data.x, c, &mean, &sd, &n_obs);
    if (n_obs == 0)
      throw UsageError("cqr_impute_means: column " + std::to_string(c) +
                       " has no observed values");
    for (int i = 0; i < data.n; ++i)
      if (std::isnan(out.x(i, c))) out.x(i, c) = mean;
  }
  out.mask.clear();
  return out;
}

// Unconstrained layout: mu, c[n_cov], coef[m], log sigma2_y, log nu_main,
// log nu_int, logit psi_main, logit psi_int.
class CqrModel {
 public:
  CqrModel(CqrDesign design, const ExposureDataset& data)
      : design_(std::move(design)), y_(data.y), z_(data.z), n_cov_(data.n_cov()) {
    if (int(y_.size()) != design_.X.rows())
      throw UsageError("CqrModel: outcome length does not match design");
    blocks_ = design_.prior_blocks();
  }

  int dim() const { return 1 + n_cov_ + design_.m() + 5; }
  const CqrDesign& design() const { return design_; }

  int idx_sigma2() const { return 1 + n_cov_ + design_.m(); }
  int idx_nu_main() const { return idx_sigma2() + 1; }
  int idx_nu_int() const { return idx_sigma2() + 2; }
  int idx_psi_main() const { return idx_sigma2() + 3; }
  int idx_psi_int() const { return idx_sigma2() + 4; }

  std::vector<std::string> names(const ExposureDataset& data) const {
    std::vector<std::string> out;
    out.push_back("mu");
    for (int c = 0; c < n_cov_; ++c)
      out.push_back("c_" + (c < int(data.covariate_names.size())
                                ? data.covariate_names[c]
                                : "z" + std::to_string(c + 1)));
    for (const auto& t : design_.terms) {
      if (t.main)
        out.push_back("theta[" + std::to_string(t.j1 + 1) + "," +
                      std::to_string(t.t1 + 1) + "]");
      else
        out.push_back("gamma[" + std::to_string(t.j1 + 1) + "," +
                      std::to_string(t.j2 + 1) + "," + std::to_string(t.t1 + 1) + "," +
                      std::to_string(t.t2 + 1) + "]");
    }
    out.push_back("sigma2_y");
    out.push_back("nu_main");
    out.push_back("nu_int");
    out.push_back("psi_main");
    out.push_back("psi_int");
    return out;
  }

  Vec constrain(const Vec& u) const {
    Vec v = u;
    for (int s = idx_sigma2(); s <= idx_nu_int(); ++s) v[s] = std::exp(u[s]);
    for (int s = idx_psi_main(); s <= idx_psi_int(); ++s)
      v[s] = 1.0 / (1.0 + std::exp(-u[s]));
    return v;
  }

  double log_posterior(const Vec& u, Vec* grad) const {
    if (u.size() != dim()) throw UsageError("CqrModel: parameter length mismatch");
    const double inf = std::numeric_limits<double>::infinity();
    for (int i = 0; i < u.size(); ++i)
      if (std::abs(u[i]) > 700.0) return -inf;

    const double mu = u[0];
    const double sigma2 = std::exp(u[idx_sigma2()]);
    const double nu_main = std::exp(u[idx_nu_main()]);
    const double nu_int = std::exp(u[idx_nu_int()]);
    const double psi_main = 1.0 / (1.0 + std::exp(-u[idx_psi_main()]));
    const double psi_int = 1.0 / (1.0 + std::exp(-u[idx_psi_int()]));

    double lp = 0.0;
    if (grad) grad->setZero(dim());
    auto gc = [&](int i) -> double& { return (*grad)[i]; };

    // Jacobians of the transforms.
    lp += u[idx_sigma2()] + u[idx_nu_main()] + u[idx_nu_int()];
    lp += std::log(psi_main * (1.0 - psi_main)) + std::log(psi_int * (1.0 - psi_int));

    // Intercept and covariate priors, N(0,10).
    lp += density::normal_lp(mu, 10.0);
    if (grad) gc(0) += -mu / 10.0;
    for (int c = 0; c < n_cov_; ++c) {
      lp += density::normal_lp(u[1 + c], 10.0);
      if (grad) gc(1 + c) += -u[1 + c] / 10.0;
    }

    // Variance priors IG(1,1) on sigma2, nu_main, nu_int.
    lp += density::inv_gamma_lp(sigma2, 1.0, 1.0) + density::inv_gamma_lp(nu_main, 1.0, 1.0) +
          density::inv_gamma_lp(nu_int, 1.0, 1.0);
    if (grad) {
      gc(idx_sigma2()) += -2.0 / sigma2 + 1.0 / (sigma2 * sigma2);
      gc(idx_nu_main()) += -2.0 / nu_main + 1.0 / (nu_main * nu_main);
      gc(idx_nu_int()) += -2.0 / nu_int + 1.0 / (nu_int * nu_int);
    }

    // Coefficient blocks under nu * CS(psi); closed-form inverse per block.
    const int coef0 = 1 + n_cov_;
    double g_psi_main = 0.0, g_psi_int = 0.0;
    for (const auto& [off, size] : blocks_) {
      const bool is_main = off < design_.n_main;
      const double nu = is_main ? nu_main : nu_int;
      const double psi = is_main ? psi_main : psi_int;
      const int d = size;
      const auto g = u.segment(coef0 + off, d);
      const double S = g.sum();
      const double ss = g.squaredNorm();
      const double c = psi / (1.0 + (d - 1) * psi);
      const double Q = (ss - c * S * S) / (1.0 - psi);
      const double logdet_cs =
          (d - 1) * std::log(1.0 - psi) + std::log(1.0 + (d - 1) * psi);
      lp += -0.5 * d * std::log(2.0 * M_PI * nu) - 0.5 * logdet_cs - Q / (2.0 * nu);
      if (grad) {
        // d/dg: -(g - c S 1)/(nu (1-psi))
        for (int a = 0; a < d; ++a)
          gc(coef0 + off + a) += -(g[a] - c * S) / (nu * (1.0 - psi));
        double& gnu = is_main ? gc(idx_nu_main()) : gc(idx_nu_int());
        gnu += -0.5 * d / nu + Q / (2.0 * nu * nu);
        const double dlogdet = -(d - 1) / (1.0 - psi) + (d - 1) / (1.0 + (d - 1) * psi);
        const double dc = 1.0 / ((1.0 + (d - 1) * psi) * (1.0 + (d - 1) * psi));
        const double dQ = Q / (1.0 - psi) - (S * S / (1.0 - psi)) * dc;
        const double gp = -0.5 * dlogdet - dQ / (2.0 * nu);
        (is_main ? g_psi_main : g_psi_int) += gp;
      }
    }

    // Likelihood.
    const int n = int(y_.size());
    if (n > 0) {
      Vec r = y_ - Vec::Constant(n, mu) - design_.X * u.segment(coef0, design_.m());
      if (n_cov_ > 0) r -= z_ * u.segment(1, n_cov_);
      const double ss = r.squaredNorm();
      lp += -0.5 * n * std::log(2.0 * M_PI * sigma2) - ss / (2.0 * sigma2);
      if (grad) {
        const Vec rs = r / sigma2;
        gc(0) += rs.sum();
        if (n_cov_ > 0) grad->segment(1, n_cov_) += z_.transpose() * rs;
        grad->segment(coef0, design_.m()) += design_.X.transpose() * rs;
        gc(idx_sigma2()) += -0.5 * n / sigma2 + ss / (2.0 * sigma2 * sigma2);
      }
    }

    if (!std::isfinite(lp)) return -inf;
    if (grad) {
      // Chain rule for log and logit slots.
      gc(idx_sigma2()) = gc(idx_sigma2()) * sigma2 + 1.0;
      gc(idx_nu_main()) = gc(idx_nu_main()) * nu_main + 1.0;
      gc(idx_nu_int()) = gc(idx_nu_int()) * nu_int + 1.0;
      gc(idx_psi_main()) =
          g_psi_main * psi_main * (1.0 - psi_main) + (1.0 - 2.0 * psi_main);
      gc(idx_psi_int()) = g_psi_int * psi_int * (1.0 - psi_int) + (1.0 - 2.0 * psi_int);
      if (!grad->allFinite()) return -inf;
    }
    return lp;
  }

  Target target(const ExposureDataset& data) const {
    Target t;
    t.dim = dim();
    t.names = names(data);
    t.logp_grad = [this](const Vec& q, Vec* g) { return log_posterior(q, g); };
    t.constrain = [this](const Vec& q) { return constrain(q); };
    const int d = dim();
    const int s0 = idx_sigma2();
    t.initial_point = [d, s0](RngStream& rng) {
      Vec q(d);
      for (int i = 0; i < d; ++i) q[i] = i >= s0 ? 0.0 : rng.uniform(-1.0, 1.0);
      return q;
    };
    return t;
  }

  // Prediction from one constrained draw for a design row (and covariates).
  double predict(const Vec& v, const Vec& xrow, const Vec& zrow) const {
    double m = v[0];
    for (int c = 0; c < n_cov_; ++c) m += v[1 + c] * zrow[c];
    m += xrow.dot(v.segment(1 + n_cov_, design_.m()));
    return m;
  }

 private:
  CqrDesign design_;
  Vec y_;
  Mat z_;
  int n_cov_;
  std::vector<std::pair<int, int>> blocks_;
};

// View a CQR draw as an induced quadratic surface so downstream effect and
// metric code treats both models uniformly. Off-diagonal interaction mass is
// split across the symmetric entries.
inline InducedCoefficients cqr_induced(const CqrDesign& d, int n_cov, const Vec& v) {
  InducedCoefficients out;
  out.alpha0 = v[0];
  const int coef0 = 1 + n_cov;
  out.alpha = Vec::Zero(d.p * d.T);
  out.gamma = Mat::Zero(d.p * d.T, d.p * d.T);
  for (int c = 0; c < d.m(); ++c) {
    const CqrTerm& t = d.terms[c];
    const double val = v[coef0 + c];
    if (t.main) {
      out.alpha[t.j1 * d.T + t.t1] = val;
    } else {
      const int a = t.j1 * d.T + t.t1;
      const int b = t.j2 * d.T + t.t2;
      if (a == b) {
        out.gamma(a, a) += val;
      } else {
        out.gamma(a, b) += val / 2.0;
        out.gamma(b, a) += val / 2.0;
      }
    }
  }
  return out;
}

}  // namespace lowfr
