#pragma once

// Longitudinal exposure data: n subjects, p exposures, T time points, an
// outcome, optional covariates, and an explicit missingness mask over the
// exposure tensor.  x is stored as an n x (p*T) matrix in exposure-major,
// time-minor column order, i.e. column (j-1)*T + (t-1) holds exposure j at
// time t.  Missing entries are NaN in x and listed in the mask.

#include <cmath>
#include <string>
#include <vector>

#include "lowfr/errors.hpp"
#include "lowfr/matrix.hpp"

namespace lowfr {

struct MaskEntry {
  int i;  // subject, 0-based
  int j;  // exposure, 0-based
  int t;  // time, 0-based
};

struct ExposureDataset {
  int n = 0;
  int p = 0;
  int T = 0;
  Vec y;                               // n
  Mat x;                               // n x (p*T), NaN where masked
  Mat z;                               // n x c covariates (c may be 0)
  std::vector<std::string> exposure_names;   // p
  std::vector<std::string> covariate_names;  // c
  std::vector<MaskEntry> mask;

  int n_cov() const { return int(z.cols()); }
  int xcol(int j, int t) const { return j * T + t; }

  std::string xcol_name(int j, int t) const {
    return exposure_names[j] + "_" + std::to_string(t + 1);
  }

  void validate() const {
    if (n < 0 || p <= 0 || T <= 0) throw UsageError("dataset: need p >= 1, T >= 1");
    if (y.size() != n) throw UsageError("dataset: y length != n");
    if (x.rows() != n || x.cols() != Eigen::Index(p) * T)
      throw UsageError("dataset: x must be n x (p*T)");
    if (z.rows() != n && n_cov() > 0) throw UsageError("dataset: covariate rows != n");
    if (int(exposure_names.size()) != p)
      throw UsageError("dataset: exposure_names length != p");
    if (int(covariate_names.size()) != n_cov())
      throw UsageError("dataset: covariate_names length != #covariates");
    for (const auto& m : mask) {
      if (m.i < 0 || m.i >= n || m.j < 0 || m.j >= p || m.t < 0 || m.t >= T)
        throw UsageError("dataset: mask entry out of range");
      if (!std::isnan(x(m.i, m.j * T + m.t)))
        throw UsageError("dataset: masked entry is not NaN");
    }
    // Every NaN must be accounted for in the mask.
    std::size_t nan_count = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index c = 0; c < x.cols(); ++c)
        if (std::isnan(x(i, c))) ++nan_count;
    if (nan_count != mask.size())
      throw UsageError("dataset: x has NaN entries not listed in the mask");
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (std::isnan(y[i])) throw UsageError("dataset: y contains NaN");
  }
};

// Centering/scaling constants captured by standardize().  Effects estimated
// on the standardized scale are mapped back to the original scale with these.
struct StandardizationRecord {
  Vec x_mean;  // p*T, observed-entry means
  Vec x_sd;    // p*T, observed-entry sds (divisor n-1)
  double y_mean = 0.0;
  double y_sd = 1.0;
};

namespace detail {
inline void mean_sd_observed(const Mat& x, Eigen::Index col, double* mean,
                             double* sd, int* n_obs) {
  double s = 0.0;
  int m = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (!std::isnan(x(i, col))) {
      s += x(i, col);
      ++m;
    }
  *n_obs = m;
  *mean = m > 0 ? s / m : 0.0;
  double ss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (!std::isnan(x(i, col))) ss += (x(i, col) - *mean) * (x(i, col) - *mean);
  *sd = m > 1 ? std::sqrt(ss / (m - 1)) : 0.0;
}
}  // namespace detail

// Center and scale each exposure column and the outcome to mean 0, sd 1,
// using observed entries only.  Idempotent up to floating-point noise.
// A column with fewer than 2 observed values or zero variance is an error
// naming the column.
inline ExposureDataset standardize(const ExposureDataset& data,
                                   StandardizationRecord* record) {
  data.validate();
  ExposureDataset out = data;
  StandardizationRecord rec;
  rec.x_mean = Vec::Zero(data.p * data.T);
  rec.x_sd = Vec::Ones(data.p * data.T);

  for (int j = 0; j < data.p; ++j)
    for (int t = 0; t < data.T; ++t) {
      const Eigen::Index col = data.xcol(j, t);
      double mean, sd;
      int n_obs;
      detail::mean_sd_observed(data.x, col, &mean, &sd, &n_obs);
      if (n_obs < 2)
        throw UsageError("standardize: column " + data.xcol_name(j, t) +
                         " has fewer than 2 observed values");
      if (!(sd > 0.0))
        throw UsageError("standardize: column " + data.xcol_name(j, t) +
                         " is constant");
      rec.x_mean[col] = mean;
      rec.x_sd[col] = sd;
      for (Eigen::Index i = 0; i < data.n; ++i)
        if (!std::isnan(out.x(i, col))) out.x(i, col) = (out.x(i, col) - mean) / sd;
    }

  if (data.n < 2) throw UsageError("standardize: need at least 2 subjects");
  rec.y_mean = data.y.mean();
  const double yss = (data.y.array() - rec.y_mean).square().sum();
  rec.y_sd = std::sqrt(yss / (data.n - 1));
  if (!(rec.y_sd > 0.0)) throw UsageError("standardize: outcome y is constant");
  out.y = (data.y.array() - rec.y_mean) / rec.y_sd;

  if (record) *record = rec;
  return out;
}

}  // namespace lowfr
