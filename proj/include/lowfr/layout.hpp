#pragma once

// Flat unconstrained parameter state with a named block layout, plus the
// bijective transforms between unconstrained and constrained scales.
// Variances and MGP scales live on the log scale, phi on the logit scale,
// everything else is linear.  The block order is fixed and is the contract
// for draw files and for every gradient index below.

#include <string>
#include <vector>

#include "lowfr/dataset.hpp"
#include "lowfr/errors.hpp"
#include "lowfr/matrix.hpp"
#include "lowfr/model_spec.hpp"

namespace lowfr {

enum class Blk {
  Mu, Cov, Beta, Omega, LogXiBeta, LogXiOmega, LogDelta, LogA1, LogA2,
  B, W, LogXiB, LogXiW, LogDeltaInt, LogAInt, Lambda, LogSigma2, LogSigma2y,
  LogitPhi, Eta, Ximp, BetaInt, OmegaInt, LogXiBetaInt, LogXiOmegaInt,
  LogTauInt2, Theta,
};

enum class Transform { Linear, Log, Logit };

// Initialization class for sampling: most coordinates start at Uniform(-1,1);
// eta starts at zero and log-variance slots at zero (variance 1).
enum class InitClass { Uniform, Zero };

struct Block {
  Blk id;
  std::string name;
  int offset;
  int rows;
  int cols;  // size = rows * cols
  Transform tf;
  InitClass init;

  int size() const { return rows * cols; }
};

struct ParamLayout {
  std::vector<Block> blocks;
  int dim = 0;

  const Block* find(Blk id) const {
    for (const auto& b : blocks)
      if (b.id == id) return &b;
    return nullptr;
  }
  const Block& at(Blk id) const {
    const Block* b = find(id);
    if (!b) throw UsageError("layout: block not present in this variant");
    return *b;
  }
  bool has(Blk id) const { return find(id) != nullptr; }
};

inline ParamLayout build_layout(const ModelSpec& spec) {
  spec.validate();
  ParamLayout lay;
  int off = 0;
  auto add = [&](Blk id, const std::string& name, int rows, int cols, Transform tf,
                 InitClass init = InitClass::Uniform) {
    if (rows * cols == 0) return;
    lay.blocks.push_back({id, name, off, rows, cols, tf, init});
    off += rows * cols;
  };

  const int p = spec.p, T = spec.T, k = spec.k, H1 = spec.h1();
  add(Blk::Mu, "mu", 1, 1, Transform::Linear);
  add(Blk::Cov, "c", spec.n_cov, 1, Transform::Linear);
  if (spec.is_direct()) {
    if (spec.variant == Variant::DirectRank) {
      add(Blk::Beta, "beta", spec.rank, p, Transform::Linear);
      add(Blk::Omega, "omega", spec.rank, T, Transform::Linear);
    } else {
      add(Blk::Theta, "theta", p, T, Transform::Linear);
    }
    add(Blk::LogSigma2y, "sigma2_y", 1, 1, Transform::Log, InitClass::Zero);
    lay.dim = off;
    return lay;
  }

  add(Blk::Beta, "beta", H1, k, Transform::Linear);
  add(Blk::Omega, "omega", H1, T, Transform::Linear);
  add(Blk::LogXiBeta, "xi_beta", H1, k, Transform::Log);
  add(Blk::LogXiOmega, "xi_omega", H1, T, Transform::Log);
  add(Blk::LogDelta, "delta", H1, 1, Transform::Log);
  add(Blk::LogA1, "a1", 1, 1, Transform::Log);
  add(Blk::LogA2, "a2", 1, 1, Transform::Log);
  add(Blk::B, "B", k, k, Transform::Linear);
  add(Blk::W, "W", T, T, Transform::Linear);
  add(Blk::LogXiB, "xi_B", k, k, Transform::Log);
  add(Blk::LogXiW, "xi_W", T, T, Transform::Log);
  add(Blk::LogDeltaInt, "delta_int", 1, 1, Transform::Log);
  add(Blk::LogAInt, "a_int", 1, 1, Transform::Log);
  add(Blk::Lambda, "Lambda", p, k, Transform::Linear);
  add(Blk::LogSigma2, "sigma2", p, 1, Transform::Log, InitClass::Zero);
  add(Blk::LogSigma2y, "sigma2_y", 1, 1, Transform::Log, InitClass::Zero);
  add(Blk::LogitPhi, "phi", 1, 1, Transform::Logit);
  add(Blk::Eta, "eta", spec.n, k * T, Transform::Linear, InitClass::Zero);
  add(Blk::Ximp, "ximp", spec.n_missing, 1, Transform::Linear);
  if (spec.variant == Variant::LowfrSexInt) {
    add(Blk::BetaInt, "beta_int", k, 1, Transform::Linear);
    add(Blk::OmegaInt, "omega_int", T, 1, Transform::Linear);
    add(Blk::LogXiBetaInt, "xi_beta_int", k, 1, Transform::Log);
    add(Blk::LogXiOmegaInt, "xi_omega_int", T, 1, Transform::Log);
    add(Blk::LogTauInt2, "tau_int2", 1, 1, Transform::Log);
  }
  lay.dim = off;
  return lay;
}

// Constrained-scale coordinate labels in layout order, for draw files.
// Multi-index blocks use 1-based bracket labels, e.g. beta[2,1] or eta[i,h,t].
inline std::vector<std::string> coordinate_names(const ParamLayout& lay,
                                                 const ModelSpec& spec,
                                                 const ExposureDataset* data = nullptr) {
  std::vector<std::string> names;
  names.reserve(lay.dim);
  for (const auto& b : lay.blocks) {
    if (b.id == Blk::Cov && data) {
      for (int m = 0; m < b.rows; ++m) names.push_back("c_" + data->covariate_names[m]);
      continue;
    }
    if (b.id == Blk::Eta) {
      const int kT = b.cols, T = spec.T;
      for (int i = 0; i < b.rows; ++i)
        for (int q = 0; q < kT / T; ++q)
          for (int t = 0; t < T; ++t)
            names.push_back("eta[" + std::to_string(i + 1) + "," + std::to_string(q + 1) +
                            "," + std::to_string(t + 1) + "]");
      continue;
    }
    if (b.id == Blk::Ximp && data) {
      for (const auto& m : data->mask)
        names.push_back("ximp[" + std::to_string(m.i + 1) + "," +
                        std::to_string(m.j + 1) + "," + std::to_string(m.t + 1) + "]");
      continue;
    }
    if (b.size() == 1) {
      names.push_back(b.name);
    } else if (b.cols == 1) {
      for (int r = 0; r < b.rows; ++r)
        names.push_back(b.name + "[" + std::to_string(r + 1) + "]");
    } else {
      for (int r = 0; r < b.rows; ++r)
        for (int c = 0; c < b.cols; ++c)
          names.push_back(b.name + "[" + std::to_string(r + 1) + "," +
                          std::to_string(c + 1) + "]");
    }
  }
  return names;
}

// exp/logistic with the documented saturation guard.
inline Vec to_constrained(const ModelSpec& spec, const Vec& u) {
  const ParamLayout lay = build_layout(spec);
  if (u.size() != lay.dim)
    throw UsageError("to_constrained: state length " + std::to_string(u.size()) +
                     " does not match layout length " + std::to_string(lay.dim));
  Vec v = u;
  for (const auto& b : lay.blocks) {
    if (b.tf == Transform::Linear) continue;
    for (int s = b.offset; s < b.offset + b.size(); ++s) {
      if (std::abs(u[s]) > 700.0)
        throw DomainError("to_constrained: transform saturation in " + b.name);
      v[s] = b.tf == Transform::Log ? std::exp(u[s]) : 1.0 / (1.0 + std::exp(-u[s]));
    }
  }
  return v;
}

inline Vec to_unconstrained(const ModelSpec& spec, const Vec& v) {
  const ParamLayout lay = build_layout(spec);
  if (v.size() != lay.dim)
    throw UsageError("to_unconstrained: state length does not match layout");
  Vec u = v;
  for (const auto& b : lay.blocks) {
    if (b.tf == Transform::Linear) continue;
    for (int s = b.offset; s < b.offset + b.size(); ++s) {
      if (b.tf == Transform::Log) {
        if (!(v[s] > 0)) throw DomainError("to_unconstrained: nonpositive value in " + b.name);
        u[s] = std::log(v[s]);
      } else {
        if (!(v[s] > 0 && v[s] < 1))
          throw DomainError("to_unconstrained: value outside (0,1) in " + b.name);
        u[s] = std::log(v[s] / (1.0 - v[s]));
      }
    }
  }
  return u;
}

}  // namespace lowfr
