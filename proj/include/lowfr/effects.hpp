#pragma once

// Posterior effect summaries over per-draw induced coefficients, plus the
// benchmark metric suite (MSE / coverage / TP / TN for mains, interactions,
// and cumulative effects).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "lowfr/dataset.hpp"
#include "lowfr/errors.hpp"
#include "lowfr/induced.hpp"
#include "lowfr/matrix.hpp"
#include "lowfr/rng.hpp"
#include "lowfr/simgen.hpp"

namespace lowfr {

struct EffectSummary {
  std::string label;
  double mean = 0.0, lo = 0.0, hi = 0.0;
  bool excludes_zero = false;
};

namespace effects_detail {

// Type-7 quantile (linear interpolation of order statistics).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw UsageError("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = (double(v.size()) - 1.0) * p;
  const std::size_t lo = std::size_t(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - double(lo)) * (v[hi] - v[lo]);
}

inline EffectSummary summarize(const std::string& label, const std::vector<double>& d) {
  if (d.empty()) throw UsageError("summarize_effects: no draws");
  EffectSummary s;
  s.label = label;
  double m = 0.0;
  for (double x : d) m += x;
  s.mean = m / double(d.size());
  s.lo = quantile(d, 0.025);
  s.hi = quantile(d, 0.975);
  s.excludes_zero = !(s.lo <= 0.0 && 0.0 <= s.hi);
  return s;
}

}  // namespace effects_detail

// Reporting labels. Times are 1-based.
inline std::string label_main(const std::string& exposure, int t) {
  return exposure + "@" + std::to_string(t + 1);
}
inline std::string label_interaction(const std::string& e1, int t1, const std::string& e2,
                                     int t2) {
  return label_main(e1, t1) + ":" + label_main(e2, t2);
}

// The uniquely reportable interaction coefficient for flat positions a <= b:
// the full off-diagonal weight 2*Gamma(a,b), or the diagonal entry itself.
inline double reportable_interaction(const Mat& gamma, int a, int b) {
  return a == b ? gamma(a, a) : 2.0 * gamma(a, b);
}

inline EffectSummary main_effect(const std::vector<InducedCoefficients>& draws, int j,
                                 int t, const std::string& exposure, int T) {
  std::vector<double> d;
  d.reserve(draws.size());
  for (const auto& ic : draws) d.push_back(ic.alpha[j * T + t]);
  return effects_detail::summarize(label_main(exposure, t), d);
}

inline EffectSummary interaction_effect(const std::vector<InducedCoefficients>& draws,
                                        int j1, int t1, int j2, int t2,
                                        const std::string& e1, const std::string& e2,
                                        int T) {
  int a = j1 * T + t1, b = j2 * T + t2;
  std::string lab = a <= b ? label_interaction(e1, t1, e2, t2)
                           : label_interaction(e2, t2, e1, t1);
  if (a > b) std::swap(a, b);
  std::vector<double> d;
  d.reserve(draws.size());
  for (const auto& ic : draws) d.push_back(reportable_interaction(ic.gamma, a, b));
  return effects_detail::summarize(lab, d);
}

// All mains then all interactions (upper triangle including the diagonal, in
// flat row-major order).
inline std::vector<EffectSummary> all_effects(const std::vector<InducedCoefficients>& draws,
                                              const std::vector<std::string>& exposures,
                                              int T) {
  if (draws.empty()) throw UsageError("summarize_effects: no draws");
  const int p = int(exposures.size());
  std::vector<EffectSummary> out;
  for (int j = 0; j < p; ++j)
    for (int t = 0; t < T; ++t) out.push_back(main_effect(draws, j, t, exposures[j], T));
  for (int a = 0; a < p * T; ++a)
    for (int b = a; b < p * T; ++b)
      out.push_back(interaction_effect(draws, a / T, a % T, b / T, b % T,
                                       exposures[a / T], exposures[b / T], T));
  return out;
}

// Expected outcome change moving the selected (exposure, time) coordinates
// from lo to hi, everything else at zero, per draw.
inline EffectSummary cumulative_effect(const std::vector<InducedCoefficients>& draws,
                                       const std::vector<std::pair<int, int>>& subset,
                                       int p, int T, const std::string& label,
                                       double lo = -1.0, double hi = 1.0) {
  if (subset.empty()) throw UsageError("cumulative_effect: empty subset");
  if (draws.empty()) throw UsageError("cumulative_effect: no draws");
  Vec d_hi = Vec::Zero(p * T), d_lo = Vec::Zero(p * T);
  for (const auto& [j, t] : subset) {
    if (j < 0 || j >= p || t < 0 || t >= T)
      throw UsageError("cumulative_effect: (exposure, time) index out of range");
    d_hi[j * T + t] = hi;
    d_lo[j * T + t] = lo;
  }
  std::vector<double> vals;
  vals.reserve(draws.size());
  for (const auto& ic : draws)
    vals.push_back(induced_surface(ic, d_hi) - induced_surface(ic, d_lo));
  return effects_detail::summarize(label, vals);
}

struct SurfaceCell {
  double u = 0.0, v = 0.0;
  double mean = 0.0, lo = 0.0, hi = 0.0;
  bool excludes_zero = false;
};

// Posterior regression surface over a 2-d grid: u applied to axis1
// coordinates, v to axis2, zero elsewhere; alpha0 excluded so the origin is
// exactly zero. Cells ordered u-major.
inline std::vector<SurfaceCell> regression_surface(
    const std::vector<InducedCoefficients>& draws,
    const std::vector<std::pair<int, int>>& axis1,
    const std::vector<std::pair<int, int>>& axis2, const std::vector<double>& grid,
    int p, int T) {
  if (draws.empty()) throw UsageError("regression_surface: no draws");
  if (axis1.empty() || axis2.empty())
    throw UsageError("regression_surface: axes must be nonempty");
  for (const auto& a : axis1)
    for (const auto& b : axis2)
      if (a == b) throw UsageError("regression_surface: axes overlap");

  auto contrast = [&](const std::vector<std::pair<int, int>>& axis, double val, Vec* x) {
    for (const auto& [j, t] : axis) {
      if (j < 0 || j >= p || t < 0 || t >= T)
        throw UsageError("regression_surface: axis index out of range");
      (*x)[j * T + t] = val;
    }
  };

  std::vector<SurfaceCell> out;
  std::vector<double> vals(draws.size());
  for (double u : grid)
    for (double v : grid) {
      Vec x = Vec::Zero(p * T);
      contrast(axis1, u, &x);
      contrast(axis2, v, &x);
      for (std::size_t i = 0; i < draws.size(); ++i)
        vals[i] = draws[i].alpha.dot(x) + x.dot(draws[i].gamma * x);
      EffectSummary s = effects_detail::summarize("", vals);
      out.push_back({u, v, s.mean, s.lo, s.hi, s.excludes_zero});
    }
  return out;
}

// Benchmark metrics, following the same conventions as the summaries above:
// TP among truly nonzero coefficients needs a zero-excluding interval on the
// correct side; TN among truly zero coefficients needs the interval to cover
// zero. TN is NaN when no true zeros exist.
struct MetricsRow {
  std::string model;
  double main_mse = 0.0, int_mse = 0.0;
  double main_cov = 0.0, int_cov = 0.0;
  double main_tp = 0.0, main_tn = 0.0;
  double ce_mse = 0.0, ce_cov = 0.0, ce_tp = 0.0, ce_tn = 0.0;
};

struct CoefEstimates {
  std::vector<EffectSummary> mains;
  std::vector<EffectSummary> interactions;
  std::vector<EffectSummary> cumulative;
};

namespace effects_detail {

struct RateAccum {
  double se = 0.0;
  int n = 0, covered = 0;
  int nonzero = 0, tp = 0;
  int zero = 0, tn = 0;

  void add(const EffectSummary& est, double truth) {
    ++n;
    se += (est.mean - truth) * (est.mean - truth);
    if (est.lo <= truth && truth <= est.hi) ++covered;
    if (truth != 0.0) {
      ++nonzero;
      const bool correct_side = truth > 0.0 ? est.lo > 0.0 : est.hi < 0.0;
      if (est.excludes_zero && correct_side) ++tp;
    } else {
      ++zero;
      if (!est.excludes_zero) ++tn;
    }
  }
  double mse() const { return n > 0 ? se / n : std::numeric_limits<double>::quiet_NaN(); }
  double cov() const {
    return n > 0 ? double(covered) / n : std::numeric_limits<double>::quiet_NaN();
  }
  double tp_rate() const {
    return nonzero > 0 ? double(tp) / nonzero : std::numeric_limits<double>::quiet_NaN();
  }
  double tn_rate() const {
    return zero > 0 ? double(tn) / zero : std::numeric_limits<double>::quiet_NaN();
  }
};

}  // namespace effects_detail

// Truth lookup tables keyed by the reporting labels.
inline std::map<std::string, double> truth_main_labels(const SimTruth& truth,
                                                       const std::vector<std::string>& ex) {
  std::map<std::string, double> out;
  for (int j = 0; j < truth.p; ++j)
    for (int t = 0; t < truth.T; ++t)
      out[label_main(ex[j], t)] = truth.alpha[j * truth.T + t];
  return out;
}

inline std::map<std::string, double> truth_interaction_labels(
    const SimTruth& truth, const std::vector<std::string>& ex) {
  std::map<std::string, double> out;
  const int T = truth.T;
  for (int a = 0; a < truth.p * T; ++a)
    for (int b = a; b < truth.p * T; ++b)
      out[label_interaction(ex[a / T], a % T, ex[b / T], b % T)] =
          reportable_interaction(truth.gamma, a, b);
  return out;
}

inline MetricsRow evaluate_metrics(const std::string& model, const CoefEstimates& est,
                                   const SimTruth& truth,
                                   const std::vector<std::string>& exposures) {
  using effects_detail::RateAccum;
  const auto t_main = truth_main_labels(truth, exposures);
  const auto t_int = truth_interaction_labels(truth, exposures);
  std::map<std::string, double> t_ce;
  for (int j = 0; j < truth.p; ++j) t_ce[exposures[j]] = truth.cumulative[j];

  auto accumulate = [&](const std::vector<EffectSummary>& es,
                        const std::map<std::string, double>& tr, const char* what) {
    RateAccum acc;
    for (const auto& e : es) {
      const auto it = tr.find(e.label);
      if (it == tr.end())
        throw UsageError(std::string("evaluate_metrics: ") + what +
                         " label not in truth: " + e.label);
      acc.add(e, it->second);
    }
    return acc;
  };

  const RateAccum m = accumulate(est.mains, t_main, "main");
  const RateAccum g = accumulate(est.interactions, t_int, "interaction");
  const RateAccum c = accumulate(est.cumulative, t_ce, "cumulative");

  MetricsRow row;
  row.model = model;
  row.main_mse = m.mse();
  row.int_mse = g.mse();
  row.main_cov = m.cov();
  row.int_cov = g.cov();
  row.main_tp = m.tp_rate();
  row.main_tn = m.tn_rate();
  row.ce_mse = c.mse();
  row.ce_cov = c.cov();
  row.ce_tp = c.tp_rate();
  row.ce_tn = c.tn_rate();
  return row;
}

// Subject subsetting (used by cross-validation). Mask entries are remapped.
inline ExposureDataset subset_subjects(const ExposureDataset& data,
                                       const std::vector<int>& idx) {
  ExposureDataset out;
  out.n = int(idx.size());
  out.p = data.p;
  out.T = data.T;
  out.exposure_names = data.exposure_names;
  out.covariate_names = data.covariate_names;
  out.y = Vec(out.n);
  out.x = Mat(out.n, data.p * data.T);
  if (data.n_cov() > 0) out.z = Mat(out.n, data.n_cov());
  std::map<int, int> remap;
  for (int r = 0; r < out.n; ++r) {
    const int i = idx[r];
    if (i < 0 || i >= data.n) throw UsageError("subset_subjects: index out of range");
    remap[i] = r;
    out.y[r] = data.y[i];
    out.x.row(r) = data.x.row(i);
    if (data.n_cov() > 0) out.z.row(r) = data.z.row(i);
  }
  for (const auto& me : data.mask) {
    const auto it = remap.find(me.i);
    if (it != remap.end()) out.mask.push_back({it->second, me.j, me.t});
  }
  out.validate();
  return out;
}

struct CvResult {
  double mse = 0.0;
  std::vector<int> fold_of;  // per subject
};

// Seeded deterministic folds (shuffled round-robin); fit_predict maps
// (train, test) to predictions for the test rows, on the original y scale.
inline CvResult crossval(
    const ExposureDataset& data, int folds, std::uint64_t seed,
    const std::function<Vec(const ExposureDataset&, const ExposureDataset&)>& fit_predict) {
  if (folds < 2) throw UsageError("crossval: need at least 2 folds");
  if (data.n < folds) throw UsageError("crossval: more folds than subjects");
  if (data.n / folds < 2)
    throw UsageError("crossval: a fold would have fewer than 2 subjects");

  RngStream rng(seed, 0xF01D);
  std::vector<int> perm(data.n);
  for (int i = 0; i < data.n; ++i) perm[i] = i;
  for (int i = data.n - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

  CvResult res;
  res.fold_of.assign(data.n, 0);
  for (int r = 0; r < data.n; ++r) res.fold_of[perm[r]] = r % folds;

  double se = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < data.n; ++i)
      (res.fold_of[i] == f ? test_idx : train_idx).push_back(i);
    const ExposureDataset train = subset_subjects(data, train_idx);
    const ExposureDataset test = subset_subjects(data, test_idx);
    const Vec pred = fit_predict(train, test);
    if (pred.size() != test.n)
      throw EvaluationError("crossval: fit_predict returned wrong length");
    se += (pred - test.y).squaredNorm();
  }
  res.mse = se / double(data.n);
  return res;
}

}  // namespace lowfr
