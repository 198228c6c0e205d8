#pragma once

// Closed-form induced regression of y on x. Conditioning the latent factors
// on x gives eta | x ~ N(Ax, V); pushing that through the quadratic outcome
// model yields E[y|x] = alpha0 + alpha'x + x'Gamma x with
//   alpha0 = mu + tr(Omega V),  alpha = A'theta,  Gamma = sym(A'Omega A).
// The Kronecker structure of the model collapses these to small-matrix
// products, which is what induced_coefficients exploits.

#include <cmath>
#include <string>
#include <vector>

#include "lowfr/dataset.hpp"
#include "lowfr/errors.hpp"
#include "lowfr/layout.hpp"
#include "lowfr/matrix.hpp"
#include "lowfr/model_spec.hpp"

namespace lowfr {

struct ConditionalMap {
  Mat A;  // kT x pT
  Mat V;  // kT x kT, SPD
};

struct InducedCoefficients {
  double alpha0 = 0.0;
  Vec alpha;  // pT, exposure-major time-minor (matches x layout)
  Mat gamma;  // pT x pT, symmetrized
};

// Kronecker-structured conditional: V = (L'S^-1 L + I)^-1 (x) Phi,
// A = (V~ L'S^-1) (x) I_T.
inline ConditionalMap conditional_eta(const Mat& Lambda, const Vec& sigma2,
                                      const CompoundSymmetric& Phi) {
  const int p = int(Lambda.rows());
  const int k = int(Lambda.cols());
  const int T = Phi.dim();
  if (sigma2.size() != p)
    throw UsageError("conditional_eta: sigma2 length must match Lambda rows");
  for (int j = 0; j < p; ++j)
    if (!(sigma2[j] > 0.0))
      throw DomainError("conditional_eta: sigma2 entries must be positive");

  const Mat LtSi = Lambda.transpose() * sigma2.cwiseInverse().asDiagonal();
  Mat M = LtSi * Lambda;
  M.diagonal().array() += 1.0;
  const Mat Vt = solve_spd(M, Mat(Mat::Identity(k, k)));
  const Mat At = Vt * LtSi;  // k x p

  ConditionalMap out;
  out.A = kron(At, Mat::Identity(T, T));
  out.V = kron(Vt, Phi.dense());
  return out;
}

// General covariances (no Kronecker assumptions):
// V = ((L (x) I)' Pe^-1 (L (x) I) + Pn^-1)^-1, A = V (L (x) I)' Pe^-1.
inline ConditionalMap conditional_eta_general(const Mat& Lambda, const Mat& Psi_eps,
                                              const Mat& Psi_eta) {
  const int p = int(Lambda.rows());
  const int k = int(Lambda.cols());
  if (Psi_eps.rows() != Psi_eps.cols() || Psi_eta.rows() != Psi_eta.cols())
    throw UsageError("conditional_eta_general: covariances must be square");
  if (Psi_eps.rows() % p != 0)
    throw UsageError("conditional_eta_general: Psi_eps dim not a multiple of p");
  const int T = int(Psi_eps.rows()) / p;
  if (Psi_eta.rows() != k * T)
    throw UsageError("conditional_eta_general: Psi_eta must be kT x kT");

  Eigen::LLT<Eigen::MatrixXd> llt_e{Eigen::MatrixXd(Psi_eps)};
  Eigen::LLT<Eigen::MatrixXd> llt_n{Eigen::MatrixXd(Psi_eta)};
  if (llt_e.info() != Eigen::Success || llt_n.info() != Eigen::Success)
    throw DomainError("conditional_eta_general: covariance not SPD");

  const Mat L = kron(Lambda, Mat::Identity(T, T));  // pT x kT
  const Mat PeInvL = llt_e.solve(Eigen::MatrixXd(L));
  Mat M = L.transpose() * PeInvL + llt_n.solve(Eigen::MatrixXd::Identity(k * T, k * T));

  Eigen::LLT<Eigen::MatrixXd> llt_m((Eigen::MatrixXd(M) + Eigen::MatrixXd(M).transpose()) / 2.0);
  if (llt_m.info() != Eigen::Success)
    throw DomainError("conditional_eta_general: precision not SPD");

  ConditionalMap out;
  out.V = llt_m.solve(Eigen::MatrixXd::Identity(k * T, k * T));
  out.A = out.V * PeInvL.transpose();
  return out;
}

namespace induced_detail {

// Pull a named block from a constrained parameter vector as a row-major map.
inline detail::MapMat block_mat(const ParamLayout& lay, const Vec& v, Blk id) {
  const Block& b = lay.at(id);
  return detail::MapMat(v.data() + b.offset, b.rows, b.cols);
}

struct DrawPieces {
  double mu;
  Mat beta, omega, B, W, Lambda;
  Vec sigma2;
  double phi;
  Vec beta_int, omega_int;  // sex-interaction variant only
  bool has_int = false;
};

inline DrawPieces unpack(const ModelSpec& spec, const ParamLayout& lay, const Vec& v) {
  if (spec.is_direct())
    throw UsageError("induced_coefficients: direct-regression variants have no "
                     "latent-factor structure");
  if (v.size() != lay.dim)
    throw UsageError("induced_coefficients: draw length mismatch");
  DrawPieces d;
  d.mu = v[lay.at(Blk::Mu).offset];
  d.beta = block_mat(lay, v, Blk::Beta);
  d.omega = block_mat(lay, v, Blk::Omega);
  d.B = block_mat(lay, v, Blk::B);
  d.W = block_mat(lay, v, Blk::W);
  d.Lambda = block_mat(lay, v, Blk::Lambda);
  const Block& s2 = lay.at(Blk::LogSigma2);
  d.sigma2 = v.segment(s2.offset, s2.rows);
  d.phi = v[lay.at(Blk::LogitPhi).offset];
  if (spec.variant == Variant::LowfrSexInt) {
    d.has_int = true;
    const Block& bi = lay.at(Blk::BetaInt);
    const Block& oi = lay.at(Blk::OmegaInt);
    d.beta_int = v.segment(bi.offset, bi.rows);
    d.omega_int = v.segment(oi.offset, oi.rows);
  }
  return d;
}

// Shared small-matrix pieces of Theorem-style induced coefficients.
struct Core {
  Mat At;       // k x p
  Mat Vt;       // k x k
  Mat PhiDense; // T x T
};

inline Core core_maps(const DrawPieces& d, int T) {
  Core c;
  const CompoundSymmetric Phi(T, d.phi);
  c.PhiDense = Phi.dense();
  const Mat LtSi = d.Lambda.transpose() * d.sigma2.cwiseInverse().asDiagonal();
  Mat M = LtSi * d.Lambda;
  M.diagonal().array() += 1.0;
  c.Vt = solve_spd(
      M, Mat(Mat::Identity(int(d.Lambda.cols()), int(d.Lambda.cols()))));
  c.At = c.Vt * LtSi;
  return c;
}

inline InducedCoefficients assemble(const DrawPieces& d, const Core& c, int p, int T,
                                    bool flagged_group) {
  const int H1 = int(d.beta.rows());
  InducedCoefficients out;

  out.alpha0 = d.mu + (d.B * c.Vt).trace() * (d.W * c.PhiDense).trace();

  // beta~_l = At' beta_l; alpha[(j,t)] = sum_l beta~_{lj} omega_{lt}.
  Mat beta_tilde(H1, p);
  for (int l = 0; l < H1; ++l)
    beta_tilde.row(l) = (c.At.transpose() * d.beta.row(l).transpose()).transpose();
  Mat beta_int_tilde;
  if (flagged_group)
    beta_int_tilde = (c.At.transpose() * d.beta_int).transpose();  // 1 x p

  out.alpha = Vec::Zero(p * T);
  for (int j = 0; j < p; ++j)
    for (int t = 0; t < T; ++t) {
      double s = 0.0;
      for (int l = 0; l < H1; ++l) s += beta_tilde(l, j) * d.omega(l, t);
      if (flagged_group) s += beta_int_tilde(0, j) * d.omega_int[t];
      out.alpha[j * T + t] = s;
    }

  const Mat Btilde = c.At.transpose() * d.B * c.At;  // p x p
  Mat raw = kron(Btilde, d.W);                       // pT x pT
  out.gamma = 0.5 * (raw + raw.transpose());
  return out;
}

}  // namespace induced_detail

inline InducedCoefficients induced_coefficients(const ModelSpec& spec,
                                                const ParamLayout& lay, const Vec& draw) {
  using namespace induced_detail;
  const DrawPieces d = unpack(spec, lay, draw);
  const Core c = core_maps(d, spec.T);
  return assemble(d, c, spec.p, spec.T, false);
}

inline InducedCoefficients induced_coefficients(const ModelSpec& spec, const Vec& draw) {
  return induced_coefficients(spec, build_layout(spec), draw);
}

// Group-specific coefficients for the sex-interaction variant. The flagged
// group's linear term picks up the rank-1 interaction; the quadratic part is
// shared.
inline InducedCoefficients group_induced(const ModelSpec& spec, const ParamLayout& lay,
                                         const Vec& draw, bool flagged) {
  using namespace induced_detail;
  if (spec.variant != Variant::LowfrSexInt)
    throw UsageError("group_induced: requires the sex-interaction variant");
  const DrawPieces d = unpack(spec, lay, draw);
  const Core c = core_maps(d, spec.T);
  return assemble(d, c, spec.p, spec.T, flagged);
}

// Back-transform induced coefficients from the standardized fitting scale to
// the original data scale.
inline InducedCoefficients rescale_to_raw(const InducedCoefficients& s,
                                          const StandardizationRecord& rec) {
  const int m = int(s.alpha.size());
  if (rec.x_mean.size() != m || rec.x_sd.size() != m)
    throw UsageError("rescale_to_raw: standardization record dimension mismatch");
  InducedCoefficients out;
  out.gamma = Mat(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      out.gamma(i, j) = rec.y_sd * s.gamma(i, j) / (rec.x_sd[i] * rec.x_sd[j]);

  out.alpha = Vec(m);
  for (int j = 0; j < m; ++j) {
    double cross = 0.0;
    for (int i = 0; i < m; ++i)
      cross += s.gamma(i, j) * rec.x_mean[i] / (rec.x_sd[i] * rec.x_sd[j]);
    out.alpha[j] = rec.y_sd * (s.alpha[j] / rec.x_sd[j] - 2.0 * cross);
  }

  double a0 = s.alpha0;
  for (int j = 0; j < m; ++j) a0 -= s.alpha[j] * rec.x_mean[j] / rec.x_sd[j];
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      a0 += s.gamma(i, j) * rec.x_mean[i] * rec.x_mean[j] / (rec.x_sd[i] * rec.x_sd[j]);
  out.alpha0 = rec.y_mean + rec.y_sd * a0;
  return out;
}

// Evaluate the induced quadratic surface at x.
inline double induced_surface(const InducedCoefficients& ic, const Vec& x) {
  if (x.size() != ic.alpha.size())
    throw UsageError("induced_surface: x dimension mismatch");
  return ic.alpha0 + ic.alpha.dot(x) + x.dot(ic.gamma * x);
}

}  // namespace lowfr
