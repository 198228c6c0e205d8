#pragma once

// Fit pipeline: standardize, resolve the model, sample, and expose per-draw
// induced coefficients, predictions, imputations, PPC, and diagnostics.
// Fits always run on standardized data; draws and induced coefficients are on
// that scale unless explicitly rescaled.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lowfr/cqr.hpp"
#include "lowfr/dataset.hpp"
#include "lowfr/diagnostics.hpp"
#include "lowfr/effects.hpp"
#include "lowfr/errors.hpp"
#include "lowfr/induced.hpp"
#include "lowfr/layout.hpp"
#include "lowfr/model.hpp"
#include "lowfr/model_spec.hpp"
#include "lowfr/nuts.hpp"

namespace lowfr {

enum class ModelKind { Lowfr, LowfrSexInt, DirectRank, DirectFull, Cqr };

struct FitOptions {
  ModelKind kind = ModelKind::Lowfr;
  int k = 0;             // 0: select by the singular-value rule
  int rank = 1;          // direct low-rank variant
  std::string sex_col;   // covariate name carrying the group indicator
  SamplerConfig sampler;
};

struct FitResult {
  ModelKind kind = ModelKind::Lowfr;
  ModelSpec spec;
  ParamLayout layout;
  std::shared_ptr<const CqrModel> cqr;  // set for ModelKind::Cqr
  StandardizationRecord rec;
  ExposureDataset data_std;
  PosteriorDraws draws;
  std::vector<std::string> warnings;

  int n_draws() const { return draws.n_chains() * draws.n_samples(); }
  Vec draw(int d) const {
    return draws.chains[d / draws.n_samples()]
        .row(d % draws.n_samples())
        .transpose();
  }
};

// Sampler-facing view of the factor/direct model.
inline Target model_target(const ModelSpec& spec, const ParamLayout& lay,
                           const ExposureDataset& data) {
  Target t;
  t.dim = lay.dim;
  t.names = coordinate_names(lay, spec, &data);
  t.logp_grad = [spec, lay, data](const Vec& q, Vec* g) {
    std::string bad;
    return log_posterior_impl(spec, lay, data, q, g, &bad);
  };
  t.constrain = [spec](const Vec& q) { return to_constrained(spec, q); };
  t.initial_point = [lay](RngStream& rng) {
    Vec q = Vec::Zero(lay.dim);
    for (const auto& b : lay.blocks)
      if (b.init == InitClass::Uniform)
        for (int s = 0; s < b.rows * b.cols; ++s)
          q[b.offset + s] = rng.uniform(-1.0, 1.0);
    return q;
  };
  return t;
}

// Everything that precedes sampling: standardization, design or spec/layout
// construction, k selection.  Shared by fit_model and by tools that rebuild a
// fit around previously persisted draws.
inline FitResult prepare_fit(const ExposureDataset& raw, const FitOptions& opt) {
  raw.validate();
  FitResult fit;
  fit.kind = opt.kind;
  fit.data_std = standardize(raw, &fit.rec);

  if (opt.kind == ModelKind::Cqr) {
    ExposureDataset complete = fit.data_std;
    if (!complete.mask.empty()) {
      complete = cqr_impute_means(complete);
      fit.warnings.push_back("cqr: masked exposure cells mean-imputed before the "
                             "quadratic design");
    }
    fit.cqr = std::make_shared<CqrModel>(build_design(complete), complete);
    fit.data_std = std::move(complete);
  } else {
    Variant variant = Variant::Lowfr;
    if (opt.kind == ModelKind::LowfrSexInt) variant = Variant::LowfrSexInt;
    if (opt.kind == ModelKind::DirectRank) variant = Variant::DirectRank;
    if (opt.kind == ModelKind::DirectFull) variant = Variant::DirectFull;

    int sex_idx = -1;
    if (variant == Variant::LowfrSexInt) {
      for (std::size_t c = 0; c < fit.data_std.covariate_names.size(); ++c)
        if (fit.data_std.covariate_names[c] == opt.sex_col) sex_idx = int(c);
      if (sex_idx < 0)
        throw UsageError("fit_model: sex column '" + opt.sex_col +
                         "' not among covariates");
    }

    int k = 1;
    if (variant == Variant::Lowfr || variant == Variant::LowfrSexInt)
      k = opt.k > 0 ? opt.k : select_k(fit.data_std);

    fit.spec = ModelSpec::from_dataset(fit.data_std, variant, k, opt.rank, sex_idx);
    fit.layout = build_layout(fit.spec);
  }
  return fit;
}

inline Target fit_target(const FitResult& fit) {
  if (fit.kind == ModelKind::Cqr) return fit.cqr->target(fit.data_std);
  return model_target(fit.spec, fit.layout, fit.data_std);
}

inline FitResult fit_model(const ExposureDataset& raw, const FitOptions& opt) {
  FitResult fit = prepare_fit(raw, opt);
  fit.draws = run_chains(fit_target(fit), opt.sampler);
  for (const auto& w : fit.draws.warnings) fit.warnings.push_back(w);
  return fit;
}

// Induced quadratic surface of one constrained draw, standardized scale.
inline InducedCoefficients induced_one(const FitResult& fit, const Vec& v) {
  switch (fit.kind) {
    case ModelKind::Lowfr:
    case ModelKind::LowfrSexInt:
      return induced_coefficients(fit.spec, fit.layout, v);
    case ModelKind::Cqr:
      return cqr_induced(fit.cqr->design(), fit.data_std.n_cov(), v);
    case ModelKind::DirectRank:
    case ModelKind::DirectFull: {
      const int p = fit.spec.p, T = fit.spec.T;
      InducedCoefficients ic;
      ic.alpha0 = v[fit.layout.at(Blk::Mu).offset];
      ic.alpha = Vec(p * T);
      if (fit.kind == ModelKind::DirectRank) {
        const Block& bb = fit.layout.at(Blk::Beta);
        const Block& ob = fit.layout.at(Blk::Omega);
        detail::MapMat beta(v.data() + bb.offset, bb.rows, bb.cols);   // R x p
        detail::MapMat omega(v.data() + ob.offset, ob.rows, ob.cols);  // R x T
        const Mat theta = beta.transpose() * omega;                    // p x T
        for (int j = 0; j < p; ++j)
          for (int t = 0; t < T; ++t) ic.alpha[j * T + t] = theta(j, t);
      } else {
        const Block& tb = fit.layout.at(Blk::Theta);
        ic.alpha = v.segment(tb.offset, p * T);
      }
      ic.gamma = Mat::Zero(p * T, p * T);
      return ic;
    }
  }
  throw UsageError("induced_one: unknown model kind");
}

inline std::vector<InducedCoefficients> induced_draws(const FitResult& fit,
                                                      bool raw_scale) {
  std::vector<InducedCoefficients> out;
  out.reserve(fit.n_draws());
  for (int d = 0; d < fit.n_draws(); ++d) {
    InducedCoefficients ic = induced_one(fit, fit.draw(d));
    out.push_back(raw_scale ? rescale_to_raw(ic, fit.rec) : std::move(ic));
  }
  return out;
}

// Posterior-mean E[y|x, z] for new subjects, on the original y scale.
inline Vec predict_mean(const FitResult& fit, const ExposureDataset& newdata) {
  if (newdata.p != fit.data_std.p || newdata.T != fit.data_std.T)
    throw UsageError("predict_mean: exposure dimensions differ from the fit");
  if (newdata.n_cov() != fit.data_std.n_cov())
    throw UsageError("predict_mean: covariate count differs from the fit");
  const int m = newdata.p * newdata.T;
  Mat xs(newdata.n, m);
  for (int i = 0; i < newdata.n; ++i)
    for (int c = 0; c < m; ++c) {
      if (std::isnan(newdata.x(i, c)))
        throw UsageError("predict_mean: new data has missing exposure cells");
      xs(i, c) = (newdata.x(i, c) - fit.rec.x_mean[c]) / fit.rec.x_sd[c];
    }

  const int n_cov = newdata.n_cov();
  Vec acc = Vec::Zero(newdata.n);
  for (int d = 0; d < fit.n_draws(); ++d) {
    const Vec v = fit.draw(d);
    const InducedCoefficients ic = induced_one(fit, v);
    Vec cvec;
    if (n_cov > 0) {
      if (fit.kind == ModelKind::Cqr)
        cvec = v.segment(1, n_cov);
      else
        cvec = v.segment(fit.layout.at(Blk::Cov).offset, n_cov);
    }
    for (int i = 0; i < newdata.n; ++i) {
      const Vec x = xs.row(i).transpose();
      double val = ic.alpha0 + ic.alpha.dot(x) + x.dot(ic.gamma * x);
      if (n_cov > 0) val += cvec.dot(newdata.z.row(i));
      acc[i] += val;
    }
  }
  acc /= double(fit.n_draws());
  return (fit.rec.y_mean + (fit.rec.y_sd * acc.array())).matrix();
}

struct ImputedCell {
  int i = 0, j = 0, t = 0;           // subject, exposure, time (0-based)
  double mean = 0.0, lo = 0.0, hi = 0.0;  // original x scale
};

// Posterior summaries of the imputed exposure cells, back on the raw scale.
inline std::vector<ImputedCell> summarize_imputations(const FitResult& fit) {
  if (fit.kind == ModelKind::Cqr || fit.spec.is_direct() || fit.data_std.mask.empty())
    return {};
  const Block& xb = fit.layout.at(Blk::Ximp);
  std::vector<ImputedCell> out;
  std::vector<double> vals(fit.n_draws());
  for (std::size_t s = 0; s < fit.data_std.mask.size(); ++s) {
    const MaskEntry& me = fit.data_std.mask[s];
    const int col = fit.data_std.xcol(me.j, me.t);
    for (int d = 0; d < fit.n_draws(); ++d) {
      const double std_val =
          fit.draws.chains[d / fit.draws.n_samples()](d % fit.draws.n_samples(),
                                                      xb.offset + int(s));
      vals[d] = fit.rec.x_mean[col] + fit.rec.x_sd[col] * std_val;
    }
    ImputedCell cell;
    cell.i = me.i;
    cell.j = me.j;
    cell.t = me.t;
    EffectSummary es = effects_detail::summarize("", vals);
    cell.mean = es.mean;
    cell.lo = es.lo;
    cell.hi = es.hi;
    out.push_back(cell);
  }
  return out;
}

struct PpcSubject {
  int i = 0;
  double obs = 0.0, mean = 0.0, lo = 0.0, hi = 0.0;
  bool inside = false;
};

namespace fit_detail {

// Per-draw posterior predictive outcomes, original scale: subjects x draws.
inline Mat ppc_draws(const FitResult& fit, std::uint64_t seed) {
  if (fit.kind != ModelKind::Lowfr && fit.kind != ModelKind::LowfrSexInt)
    throw UsageError("ppc: needs a latent-factor fit with retained eta draws");
  if (!fit.layout.has(Blk::Eta))
    throw UsageError("ppc: fit carries no eta draws");
  const int n = fit.data_std.n;
  const int s2y_off = fit.layout.at(Blk::LogSigma2y).offset;
  RngStream rng(seed, 0x44C);
  Mat out(n, fit.n_draws());
  for (int d = 0; d < fit.n_draws(); ++d) {
    const Vec v = fit.draw(d);
    const Vec m = y_mean_per_subject(fit.spec, fit.data_std, v);
    const double sd = std::sqrt(v[s2y_off]);
    for (int i = 0; i < n; ++i) {
      const double y_std = m[i] + sd * rng.normal();
      out(i, d) = fit.rec.y_mean + fit.rec.y_sd * y_std;
    }
  }
  return out;
}

}  // namespace fit_detail

inline std::vector<PpcSubject> ppc_per_subject(const FitResult& fit,
                                               const ExposureDataset& raw,
                                               std::uint64_t seed) {
  const Mat yrep = fit_detail::ppc_draws(fit, seed);
  std::vector<PpcSubject> out;
  std::vector<double> vals(fit.n_draws());
  for (int i = 0; i < fit.data_std.n; ++i) {
    for (int d = 0; d < fit.n_draws(); ++d) vals[d] = yrep(i, d);
    const EffectSummary es = effects_detail::summarize("", vals);
    PpcSubject s;
    s.i = i;
    s.obs = raw.y[i];
    s.mean = es.mean;
    s.lo = es.lo;
    s.hi = es.hi;
    s.inside = es.lo <= s.obs && s.obs <= es.hi;
    out.push_back(s);
  }
  return out;
}

inline std::vector<double> ppc_marginal(const FitResult& fit, std::uint64_t seed) {
  const Mat yrep = fit_detail::ppc_draws(fit, seed);
  std::vector<double> pooled;
  pooled.reserve(std::size_t(yrep.rows()) * yrep.cols());
  for (int i = 0; i < yrep.rows(); ++i)
    for (int d = 0; d < yrep.cols(); ++d) pooled.push_back(yrep(i, d));
  return pooled;
}

// Per-parameter convergence diagnostics; NaN-filled for single-chain fits.
inline std::vector<ParamDiagnostics> fit_diagnostics(const FitResult& fit) {
  std::vector<ParamDiagnostics> out;
  const int dim = fit.draws.dim();
  out.reserve(dim);
  for (int c = 0; c < dim; ++c) {
    ParamDiagnostics d;
    d.name = fit.draws.names[c];
    if (fit.draws.n_chains() >= 2 && fit.draws.n_samples() >= 4) {
      const auto col = fit.draws.parameter(c);
      d.rhat = split_rhat(col);
      d.ess_bulk = ess_bulk(col);
      d.ess_tail = ess_tail(col);
    } else {
      d.rhat = d.ess_bulk = d.ess_tail = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(d);
  }
  return out;
}

}  // namespace lowfr
