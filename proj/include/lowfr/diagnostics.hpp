#pragma once

// Convergence diagnostics: rank-normalized split R-hat and bulk/tail
// effective sample sizes with Geyer's initial monotone truncation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "lowfr/errors.hpp"
#include "lowfr/matrix.hpp"

namespace lowfr {
namespace diag_detail {

// Wichura's AS 241 inverse normal CDF (double precision branch).
inline double inv_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) return std::numeric_limits<double>::quiet_NaN();
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r +
                 67265.770927008700853) * r + 45921.953931549871457) * r +
               13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.495278852545703 * r + 28729.085735721942674) * r +
                 39307.89580009271061) * r + 21213.794301586595867) * r +
               5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double x;
  if (r <= 5.0) {
    r -= 1.6;
    x = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r +
              0.24178072517745061177) * r + 1.27045825245236838258) * r +
            3.64784832476320460504) * r + 5.7694972214606914055) * r +
          4.6303378461565452959) * r + 1.42343711074968357734) /
        (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r +
              0.0151986665636164571966) * r + 0.14810397642748007459) * r +
            0.68976733498510000455) * r + 1.6763848301838038494) * r +
          2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              0.0012426609473880784386) * r + 0.026532189526576123093) * r +
            0.29656057182850489123) * r + 1.7848265399172913358) * r +
          5.4637849111641143699) * r + 6.6579046435011037772) /
        (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r +
              1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r +
            0.0148753612908506148525) * r + 0.13692988092273580531) * r +
          0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -x : x;
}

// Split each chain into halves (middle draw dropped when odd).
inline std::vector<Vec> split_chains(const std::vector<Vec>& chains) {
  std::vector<Vec> out;
  for (const auto& c : chains) {
    const int n = int(c.size());
    const int h = n / 2;
    if (h < 1) throw UsageError("diagnostics: chains must have at least 2 draws");
    out.push_back(c.head(h));
    out.push_back(c.tail(h));
  }
  return out;
}

// Pooled average ranks (ties averaged), then normal scores.
inline std::vector<Vec> rank_normalize(const std::vector<Vec>& seqs) {
  std::size_t total = 0;
  for (const auto& s : seqs) total += std::size_t(s.size());
  std::vector<std::pair<double, std::size_t>> pool;
  pool.reserve(total);
  std::size_t idx = 0;
  for (const auto& s : seqs)
    for (int i = 0; i < s.size(); ++i) pool.emplace_back(s[i], idx++);
  std::sort(pool.begin(), pool.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<double> rank(total);
  std::size_t i = 0;
  while (i < total) {
    std::size_t j = i;
    while (j + 1 < total && pool[j + 1].first == pool[i].first) ++j;
    const double avg = 0.5 * (double(i) + double(j)) + 1.0;  // 1-based average rank
    for (std::size_t t = i; t <= j; ++t) rank[pool[t].second] = avg;
    i = j + 1;
  }

  std::vector<Vec> out(seqs.size());
  idx = 0;
  const double denom = double(total) + 0.25;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    out[s] = Vec(seqs[s].size());
    for (int t = 0; t < seqs[s].size(); ++t)
      out[s][t] = inv_normal_cdf((rank[idx++] - 0.375) / denom);
  }
  return out;
}

inline bool all_constant(const std::vector<Vec>& chains) {
  double v0 = chains[0][0];
  for (const auto& c : chains)
    for (int i = 0; i < c.size(); ++i)
      if (c[i] != v0) return false;
  return true;
}

// Effective sample size of pre-transformed split sequences, Stan-style:
// combined autocorrelations from per-chain autocovariances, paired and
// truncated by Geyer's initial monotone sequence.
inline double ess_core(const std::vector<Vec>& seqs) {
  const int m = int(seqs.size());
  const int n = int(seqs[0].size());
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();

  std::vector<double> means(m), vars(m);
  for (int c = 0; c < m; ++c) {
    means[c] = seqs[c].mean();
    vars[c] = (seqs[c].array() - means[c]).square().sum() / double(n);  // acov lag 0
  }
  double mean_var = 0.0;
  for (int c = 0; c < m; ++c) mean_var += vars[c] * double(n) / double(n - 1);
  mean_var /= double(m);

  double var_plus = mean_var * double(n - 1) / double(n);
  if (m > 1) {
    double gm = 0.0;
    for (double v : means) gm += v;
    gm /= m;
    double b = 0.0;
    for (double v : means) b += (v - gm) * (v - gm);
    var_plus += b / double(m - 1);
  }
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  auto acov_at = [&](int c, int lag) {
    double s = 0.0;
    const Vec& x = seqs[c];
    for (int i = 0; i + lag < n; ++i)
      s += (x[i] - means[c]) * (x[i + lag] - means[c]);
    return s / double(n);
  };
  auto rho_at = [&](int lag) {
    double acc = 0.0;
    for (int c = 0; c < m; ++c) acc += acov_at(c, lag);
    return 1.0 - (mean_var - acc / double(m)) / var_plus;
  };

  // Geyer pairs G_k = rho(2k) + rho(2k+1), rho(0) taken as 1: accumulate the
  // initial positive sequence, enforcing monotone decrease.
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (int k = 0; 2 * k + 1 < n; ++k) {
    double pair = (k == 0 ? 1.0 : rho_at(2 * k)) + rho_at(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }

  const double total = double(m) * double(n);
  if (!(tau > 0.0)) return 10.0 * total;
  return std::min(total / tau, 10.0 * total);
}

inline void check_inputs(const std::vector<Vec>& chains) {
  if (chains.size() < 2)
    throw UsageError("diagnostics: need at least 2 chains");
  const auto n = chains[0].size();
  for (const auto& c : chains) {
    if (c.size() != n) throw UsageError("diagnostics: chains must have equal lengths");
    if (c.size() < 4) throw UsageError("diagnostics: need at least 4 draws per chain");
  }
}

// Type-7 quantile of pooled draws.
inline double pooled_quantile(const std::vector<Vec>& chains, double p) {
  std::vector<double> pool;
  for (const auto& c : chains)
    for (int i = 0; i < c.size(); ++i) pool.push_back(c[i]);
  std::sort(pool.begin(), pool.end());
  const double h = (double(pool.size()) - 1.0) * p;
  const std::size_t lo = std::size_t(std::floor(h));
  const std::size_t hi = std::min(lo + 1, pool.size() - 1);
  return pool[lo] + (h - double(lo)) * (pool[hi] - pool[lo]);
}

}  // namespace diag_detail

// Rank-normalized split R-hat. NaN when the parameter is constant.
inline double split_rhat(const std::vector<Vec>& chains) {
  using namespace diag_detail;
  check_inputs(chains);
  if (all_constant(chains)) return std::numeric_limits<double>::quiet_NaN();

  const std::vector<Vec> z = rank_normalize(split_chains(chains));
  const int m = int(z.size());
  const int n = int(z[0].size());

  double grand = 0.0;
  std::vector<double> means(m);
  for (int c = 0; c < m; ++c) {
    means[c] = z[c].mean();
    grand += means[c];
  }
  grand /= m;

  double b = 0.0;
  for (int c = 0; c < m; ++c) b += (means[c] - grand) * (means[c] - grand);
  b *= double(n) / double(m - 1);

  double w = 0.0;
  for (int c = 0; c < m; ++c)
    w += (z[c].array() - means[c]).square().sum() / double(n - 1);
  w /= m;
  if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  const double var_plus = (double(n - 1) / n) * w + b / n;
  return std::sqrt(var_plus / w);
}

// Bulk ESS: rank-normalized split chains.
inline double ess_bulk(const std::vector<Vec>& chains) {
  using namespace diag_detail;
  check_inputs(chains);
  if (all_constant(chains)) return std::numeric_limits<double>::quiet_NaN();
  return ess_core(rank_normalize(split_chains(chains)));
}

// Tail ESS: minimum over the 5% and 95% quantile indicator sequences.
inline double ess_tail(const std::vector<Vec>& chains) {
  using namespace diag_detail;
  check_inputs(chains);
  if (all_constant(chains)) return std::numeric_limits<double>::quiet_NaN();

  const double q05 = pooled_quantile(chains, 0.05);
  const double q95 = pooled_quantile(chains, 0.95);
  auto indicator_ess = [&](double q, bool upper) {
    std::vector<Vec> ind(chains.size());
    for (std::size_t c = 0; c < chains.size(); ++c) {
      ind[c] = Vec(chains[c].size());
      for (int i = 0; i < chains[c].size(); ++i)
        ind[c][i] = upper ? (chains[c][i] >= q ? 1.0 : 0.0)
                          : (chains[c][i] <= q ? 1.0 : 0.0);
    }
    if (all_constant(ind)) return std::numeric_limits<double>::quiet_NaN();
    return ess_core(split_chains(ind));
  };
  const double lo = indicator_ess(q05, false);
  const double hi = indicator_ess(q95, true);
  if (std::isnan(lo) || std::isnan(hi)) return std::numeric_limits<double>::quiet_NaN();
  return std::min(lo, hi);
}

struct ParamDiagnostics {
  std::string name;
  double rhat = 0.0, ess_bulk = 0.0, ess_tail = 0.0;
};

}  // namespace lowfr
