#pragma once

// Model configuration: dimensions, variant flags, hyperparameters.

#include <algorithm>
#include <string>

#include "lowfr/dataset.hpp"
#include "lowfr/errors.hpp"

namespace lowfr {

enum class Variant {
  Lowfr,        // latent factor regression
  LowfrSexInt,  // + rank-1 interaction with a binary covariate
  DirectRank,   // y on x directly with low-rank coefficients (rank R)
  DirectFull,   // y on x directly with unstructured coefficients
};

struct HyperParams {
  double loading_var = 10.0;        // N(0,10) on loadings
  double intercept_cov_var = 10.0;  // N(0,10) on intercept and covariate effects
  double ig_shape = 1.0;            // IG(1,1) on every variance
  double ig_rate = 1.0;
  double xi_shape = 1.5;  // Gamma(3/2,3/2) local precision scales
  double xi_rate = 1.5;
  double a_shape = 2.0;  // Gamma(2,1) on the MGP shape parameters
  double a_rate = 1.0;

  void validate() const {
    if (!(loading_var > 0 && intercept_cov_var > 0 && ig_shape > 0 && ig_rate > 0 &&
          xi_shape > 0 && xi_rate > 0 && a_shape > 0 && a_rate > 0))
      throw UsageError("HyperParams: all hyperparameters must be positive");
  }
};

struct ModelSpec {
  int n = 0;
  int p = 0;
  int T = 0;
  int k = 1;
  int H1 = 0;  // 0 = use min(p, T)
  int H2 = 1;
  Variant variant = Variant::Lowfr;
  int rank = 1;      // DirectRank only
  int sex_col = -1;  // covariate column index, LowfrSexInt only
  int n_cov = 0;
  int n_missing = 0;
  HyperParams hyper;

  int h1() const { return H1 > 0 ? H1 : std::min(p, T); }

  bool is_direct() const {
    return variant == Variant::DirectRank || variant == Variant::DirectFull;
  }

  static ModelSpec from_dataset(const ExposureDataset& data, Variant v, int k,
                                int rank = 1, int sex_col = -1) {
    ModelSpec s;
    s.n = data.n;
    s.p = data.p;
    s.T = data.T;
    s.k = k;
    s.variant = v;
    s.rank = rank;
    s.sex_col = sex_col;
    s.n_cov = data.n_cov();
    s.n_missing = int(data.mask.size());
    s.validate();
    return s;
  }

  void validate() const {
    hyper.validate();
    if (p < 1 || T < 1 || n < 0) throw UsageError("ModelSpec: need p >= 1, T >= 1, n >= 0");
    if (variant == Variant::Lowfr || variant == Variant::LowfrSexInt) {
      if (k < 1 || k > p) throw UsageError("ModelSpec: need 1 <= k <= p");
      if (H2 != 1) throw UsageError("ModelSpec: H2 is fixed at 1");
      if (H1 < 0 || H1 > std::min(p, T))
        throw UsageError("ModelSpec: H1 must be in [1, min(p,T)]");
    }
    if (variant == Variant::LowfrSexInt && (sex_col < 0 || sex_col >= n_cov))
      throw UsageError("ModelSpec: LOWFR_SEX_INT needs a designated covariate column");
    if (variant == Variant::DirectRank &&
        (rank < 1 || rank > std::min(p, T)))
      throw UsageError("ModelSpec: direct rank must be in [1, min(p,T)]");
    if (is_direct() && n_missing > 0)
      throw UsageError("ModelSpec: direct variants require complete exposure data");
  }
};

}  // namespace lowfr
