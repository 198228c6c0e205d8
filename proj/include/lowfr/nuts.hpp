#pragma once

// Multinomial no-U-turn sampler with dual-averaging step-size adaptation and
// windowed diagonal mass-matrix estimation.  Warmup follows the usual
// three-phase layout: a fast initial buffer, doubling "slow" windows that
// re-estimate the metric, and a fast terminal buffer that settles the step
// size, all scaled when the warmup budget is short.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "lowfr/errors.hpp"
#include "lowfr/matrix.hpp"
#include "lowfr/rng.hpp"

namespace lowfr {

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  int max_treedepth = 10;
  double init_stepsize = 0.0;  // <= 0: search for one
  int jobs = 1;

  void validate() const {
    if (chains < 1 || warmup < 1 || samples < 1)
      throw UsageError("SamplerConfig: chains, warmup, samples must be >= 1");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw UsageError("SamplerConfig: target_accept must be in (0,1)");
    if (max_treedepth < 1 || max_treedepth > 20)
      throw UsageError("SamplerConfig: max_treedepth out of range");
  }
};

// Log density target on the unconstrained scale.  logp_grad returns -inf
// (never throws) on numerical failure; grad may be null.
struct Target {
  int dim = 0;
  std::function<double(const Vec&, Vec*)> logp_grad;
  std::function<Vec(const Vec&)> constrain;        // identity if empty
  std::function<Vec(RngStream&)> initial_point;    // Uniform(-1,1)^dim if empty
  std::vector<std::string> names;                  // filled generically if empty
};

struct DrawStats {
  int treedepth = 0;
  bool divergent = false;
  double accept_stat = 0.0;
  double stepsize = 0.0;
  int n_leapfrog = 0;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<Mat> chains;                      // per chain: samples x dim, constrained
  std::vector<std::vector<DrawStats>> stats;    // per chain, post-warmup
  std::vector<std::string> warnings;

  int n_chains() const { return int(chains.size()); }
  int n_samples() const { return chains.empty() ? 0 : int(chains[0].rows()); }
  int dim() const { return chains.empty() ? 0 : int(chains[0].cols()); }
  int total_divergent() const {
    int d = 0;
    for (const auto& cs : stats)
      for (const auto& s : cs) d += s.divergent ? 1 : 0;
    return d;
  }
  // Column of one parameter across chains.
  std::vector<Vec> parameter(int col) const {
    std::vector<Vec> out;
    for (const auto& ch : chains) out.push_back(ch.col(col));
    return out;
  }
};

namespace nuts_detail {

constexpr double kDivergenceThreshold = 1000.0;

struct PhasePoint {
  Vec q, p, grad;
  double logp = 0.0;

  double hamiltonian(const Vec& inv_mass) const {
    return -logp + 0.5 * p.dot(inv_mass.cwiseProduct(p));
  }
};

// One leapfrog step; returns false when the density failed (treated as a
// divergence by the caller).
inline bool leapfrog(const Target& target, PhasePoint& z, double eps,
                     const Vec& inv_mass) {
  z.p += 0.5 * eps * z.grad;
  z.q += eps * inv_mass.cwiseProduct(z.p);
  z.logp = target.logp_grad(z.q, &z.grad);
  if (!std::isfinite(z.logp)) return false;
  z.p += 0.5 * eps * z.grad;
  return true;
}

inline bool no_uturn(const Vec& rho, const Vec& p_minus, const Vec& p_plus,
                     const Vec& inv_mass) {
  return rho.dot(inv_mass.cwiseProduct(p_minus)) > 0.0 &&
         rho.dot(inv_mass.cwiseProduct(p_plus)) > 0.0;
}

inline double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct Tree {
  PhasePoint z_minus, z_plus;
  Vec rho;
  Vec q_prop;
  double log_sum_w = -std::numeric_limits<double>::infinity();
  bool ok = true;  // false: divergence or internal U-turn, subtree rejected
  bool divergent = false;
};

struct TreeScratch {
  const Target& target;
  const Vec& inv_mass;
  double eps;
  double H0;
  RngStream& rng;
  double sum_metro = 0.0;
  int n_leapfrog = 0;
};

inline Tree build_tree(TreeScratch& s, const PhasePoint& z0, int depth, int dir) {
  if (depth == 0) {
    Tree t;
    t.z_minus = z0;
    const bool alive = leapfrog(s.target, t.z_minus, dir * s.eps, s.inv_mass);
    ++s.n_leapfrog;
    const double H = alive ? t.z_minus.hamiltonian(s.inv_mass)
                           : std::numeric_limits<double>::infinity();
    const double dH = H - s.H0;
    if (!alive || !std::isfinite(dH) || dH > kDivergenceThreshold) {
      t.ok = false;
      t.divergent = true;
      s.sum_metro += 0.0;
      return t;
    }
    s.sum_metro += std::min(1.0, std::exp(-dH));
    t.z_plus = t.z_minus;
    t.rho = t.z_minus.p;
    t.q_prop = t.z_minus.q;
    t.log_sum_w = -dH;
    return t;
  }

  Tree left = build_tree(s, z0, depth - 1, dir);
  if (!left.ok) return left;
  Tree right = build_tree(s, dir > 0 ? left.z_plus : left.z_minus, depth - 1, dir);
  if (!right.ok) {
    left.ok = false;
    left.divergent = right.divergent;
    return left;
  }

  Tree t;
  t.z_minus = dir > 0 ? left.z_minus : right.z_minus;
  t.z_plus = dir > 0 ? right.z_plus : left.z_plus;
  t.rho = left.rho + right.rho;
  t.log_sum_w = log_add_exp(left.log_sum_w, right.log_sum_w);
  // Multinomial sampling within the merged subtree.
  const double u = s.rng.uniform();
  t.q_prop = (std::log(u) < right.log_sum_w - t.log_sum_w) ? right.q_prop : left.q_prop;
  t.ok = no_uturn(t.rho, t.z_minus.p, t.z_plus.p, s.inv_mass);
  return t;
}

}  // namespace nuts_detail

// One NUTS transition from `state`.  Throws InferenceError if the gradient is
// not finite at the starting point.
inline std::pair<Vec, DrawStats> nuts_draw(const Target& target, const Vec& state,
                                           double stepsize, const Vec& inv_mass_diag,
                                           RngStream& rng, int max_treedepth = 10) {
  using namespace nuts_detail;
  PhasePoint z;
  z.q = state;
  z.logp = target.logp_grad(z.q, &z.grad);
  if (!std::isfinite(z.logp) || !z.grad.allFinite())
    throw InferenceError("nuts_draw: non-finite log density or gradient at start");

  z.p = Vec(target.dim);
  for (int i = 0; i < target.dim; ++i)
    z.p[i] = rng.normal() / std::sqrt(inv_mass_diag[i]);

  TreeScratch s{target, inv_mass_diag, stepsize, z.hamiltonian(inv_mass_diag), rng};

  PhasePoint z_minus = z, z_plus = z;
  Vec rho = z.p;
  Vec q_prop = z.q;
  double log_sum_w = 0.0;
  DrawStats stats;
  stats.stepsize = stepsize;

  for (int depth = 0; depth < max_treedepth; ++depth) {
    const int dir = rng.uniform() < 0.5 ? -1 : 1;
    Tree t = build_tree(s, dir > 0 ? z_plus : z_minus, depth, dir);
    if (!t.ok) {
      stats.divergent = t.divergent;
      break;
    }
    // Biased progressive sampling toward the new subtree.
    if (std::log(rng.uniform()) < t.log_sum_w - log_sum_w) q_prop = t.q_prop;
    log_sum_w = log_add_exp(log_sum_w, t.log_sum_w);
    rho += t.rho;
    if (dir > 0)
      z_plus = t.z_plus;
    else
      z_minus = t.z_minus;
    stats.treedepth = depth + 1;
    if (!no_uturn(rho, z_minus.p, z_plus.p, inv_mass_diag)) break;
  }

  stats.n_leapfrog = s.n_leapfrog;
  stats.accept_stat = s.n_leapfrog > 0 ? s.sum_metro / s.n_leapfrog : 0.0;
  return {q_prop, stats};
}

namespace nuts_detail {

// Doubling/halving search for a stepsize whose one-step acceptance ratio
// crosses `target_ratio`.  Only an initializer for dual averaging; lands on
// the conservative side of the crossing.
inline double find_reasonable_stepsize(const Target& target, const Vec& q0,
                                       const Vec& inv_mass, RngStream& rng,
                                       double eps_init, double target_ratio = 0.8) {
  PhasePoint z0;
  z0.q = q0;
  z0.logp = target.logp_grad(z0.q, &z0.grad);
  if (!std::isfinite(z0.logp))
    throw InferenceError("stepsize search: non-finite density at start");
  z0.p = Vec(target.dim);
  for (int i = 0; i < target.dim; ++i)
    z0.p[i] = rng.normal() / std::sqrt(inv_mass[i]);
  const double H0 = z0.hamiltonian(inv_mass);

  double eps = eps_init > 0 ? eps_init : 1.0;
  auto ratio_at = [&](double e) {
    PhasePoint z = z0;
    if (!leapfrog(target, z, e, inv_mass)) return 0.0;
    const double H = z.hamiltonian(inv_mass);
    return std::isfinite(H) ? std::exp(H0 - H) : 0.0;
  };

  double r = ratio_at(eps);
  const double dir = r > target_ratio ? 2.0 : 0.5;
  for (int it = 0; it < 100; ++it) {
    eps *= dir;
    r = ratio_at(eps);
    const bool crossed = dir > 1.0 ? r <= target_ratio : r > target_ratio;
    if (crossed) break;
    if (eps > 1e7 || eps < 1e-10) break;
  }
  return std::clamp(dir > 1.0 ? eps / 2.0 : eps, 1e-10, 1e7);
}

struct DualAveraging {
  double mu = 0.0, log_eps = 0.0, log_eps_bar = 0.0, h_bar = 0.0;
  int m = 0;
  static constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;

  void restart(double eps) {
    // Anchor mildly above the search result; the one-step search lands on
    // the conservative side of the trajectory-average equilibrium.
    mu = std::log(2.0 * eps);
    log_eps = std::log(eps);
    log_eps_bar = 0.0;
    h_bar = 0.0;
    m = 0;
  }
  double update(double accept, double target_accept) {
    ++m;
    h_bar = (1.0 - 1.0 / (m + t0)) * h_bar + (target_accept - accept) / (m + t0);
    log_eps = mu - std::sqrt(double(m)) / gamma * h_bar;
    const double w = std::pow(double(m), -kappa);
    log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
    return std::exp(log_eps);
  }
  double adapted() const { return std::exp(log_eps_bar); }
};

struct WarmupSchedule {
  int init_buffer = 75, term_buffer = 50, base_window = 25;
  int warmup;

  explicit WarmupSchedule(int w) : warmup(w) {
    if (init_buffer + term_buffer + base_window > warmup) {
      // Short warmup: keep the 15/75/10 proportions.
      init_buffer = std::max(1, int(0.15 * warmup));
      term_buffer = std::max(1, int(0.10 * warmup));
      base_window = std::max(0, warmup - init_buffer - term_buffer);
    }
  }

  // End iterations (exclusive) of each slow window.
  std::vector<int> window_ends() const {
    std::vector<int> ends;
    if (base_window <= 0) return ends;
    const int slow_end = warmup - term_buffer;
    int start = init_buffer, size = base_window;
    while (start < slow_end) {
      int end = start + size;
      // Absorb a remainder too small for another doubling.
      if (end + 2 * size > slow_end) end = slow_end;
      ends.push_back(std::min(end, slow_end));
      start = end;
      size *= 2;
    }
    return ends;
  }
};

// Online mean/variance per coordinate.
struct Welford {
  Vec mean, m2;
  long count = 0;
  void init(int dim) {
    mean = Vec::Zero(dim);
    m2 = Vec::Zero(dim);
    count = 0;
  }
  void add(const Vec& x) {
    ++count;
    const Vec d = x - mean;
    mean += d / double(count);
    m2 += d.cwiseProduct(x - mean);
  }
  Vec variance() const {
    if (count < 2) return Vec::Ones(mean.size());
    return m2 / double(count - 1);
  }
};

}  // namespace nuts_detail

// Run one chain; returns (samples x dim) unconstrained draws and stats.
// Deterministic given (seed, chain index) regardless of scheduling.
inline void run_one_chain(const Target& target, const SamplerConfig& cfg, int chain,
                          Mat* draws, std::vector<DrawStats>* stats,
                          bool* warmup_all_divergent) {
  using namespace nuts_detail;
  RngStream rng(cfg.seed, 0x10000ULL + std::uint64_t(chain));

  Vec q;
  double lp = -std::numeric_limits<double>::infinity();
  Vec g;
  for (int attempt = 0; attempt < 100; ++attempt) {
    q = target.initial_point ? target.initial_point(rng) : [&] {
      Vec x(target.dim);
      for (int i = 0; i < target.dim; ++i) x[i] = rng.uniform(-1.0, 1.0);
      return x;
    }();
    lp = target.logp_grad(q, &g);
    if (std::isfinite(lp) && g.allFinite()) break;
  }
  if (!std::isfinite(lp))
    throw InferenceError("run_chains: no valid initial point found for chain " +
                         std::to_string(chain));

  Vec inv_mass = Vec::Ones(target.dim);
  double eps = find_reasonable_stepsize(target, q, inv_mass, rng, cfg.init_stepsize,
                                        cfg.target_accept);
  DualAveraging da;
  da.restart(eps);

  const WarmupSchedule sched(cfg.warmup);
  const std::vector<int> window_ends = sched.window_ends();
  std::size_t window_idx = 0;
  Welford collector;
  collector.init(target.dim);

  bool any_ok = false;
  for (int it = 0; it < cfg.warmup; ++it) {
    auto [q_new, st] = nuts_draw(target, q, eps, inv_mass, rng, cfg.max_treedepth);
    q = q_new;
    any_ok = any_ok || !st.divergent;
    eps = da.update(st.accept_stat, cfg.target_accept);

    const bool in_slow = it >= sched.init_buffer && it < cfg.warmup - sched.term_buffer;
    if (in_slow) collector.add(q);
    if (window_idx < window_ends.size() && it + 1 == window_ends[window_idx]) {
      const double w = double(collector.count);
      const Vec v = collector.variance();
      inv_mass = ((w / (w + 5.0)) * v.array() + 1e-3 * (5.0 / (w + 5.0))).matrix();
      inv_mass = inv_mass.cwiseMax(1e-10);
      collector.init(target.dim);
      ++window_idx;
      // Dual averaging keeps running across the metric update.  Its gain
      // stays ~(delta - alpha)/(gamma sqrt(m)) per step, so it re-centers
      // within a few iterations, and the kappa-weighted average forgets the
      // transient; restarting from a fresh one-step search would instead
      // seed the short final window with that search's bias.
    }
  }
  if (warmup_all_divergent) *warmup_all_divergent = !any_ok;

  eps = da.adapted();
  draws->resize(cfg.samples, target.dim);
  stats->resize(cfg.samples);
  for (int it = 0; it < cfg.samples; ++it) {
    auto [q_new, st] = nuts_draw(target, q, eps, inv_mass, rng, cfg.max_treedepth);
    q = q_new;
    draws->row(it) = q.transpose();
    (*stats)[it] = st;
  }
}

inline PosteriorDraws run_chains(const Target& target, const SamplerConfig& cfg) {
  cfg.validate();
  if (target.dim < 1 || !target.logp_grad)
    throw UsageError("run_chains: target must have positive dim and a density");

  std::vector<Mat> raw(cfg.chains);
  std::vector<std::vector<DrawStats>> stats(cfg.chains);
  std::vector<char> all_div(cfg.chains, 0);
  std::vector<std::exception_ptr> errors(cfg.chains);

  const int jobs = std::max(1, std::min(cfg.jobs, cfg.chains));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= cfg.chains) return;
      try {
        bool wad = false;
        run_one_chain(target, cfg, c, &raw[c], &stats[c], &wad);
        all_div[c] = wad ? 1 : 0;
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (int c = 0; c < cfg.chains; ++c)
    if (all_div[c])
      throw InferenceError("run_chains: chain " + std::to_string(c) +
                           " diverged on every warmup iteration");

  PosteriorDraws out;
  out.names = target.names;
  if (out.names.empty())
    for (int i = 0; i < target.dim; ++i) out.names.push_back("p" + std::to_string(i + 1));
  out.stats = std::move(stats);
  out.chains.resize(cfg.chains);
  for (int c = 0; c < cfg.chains; ++c) {
    if (target.constrain) {
      out.chains[c].resize(cfg.samples, target.dim);
      for (int i = 0; i < cfg.samples; ++i)
        out.chains[c].row(i) = target.constrain(raw[c].row(i).transpose()).transpose();
    } else {
      out.chains[c] = std::move(raw[c]);
    }
  }

  int divergent = 0, total = 0;
  for (const auto& cs : out.stats)
    for (const auto& s : cs) {
      divergent += s.divergent ? 1 : 0;
      ++total;
    }
  if (total > 0 && divergent > 0.10 * total)
    out.warnings.push_back("post-warmup divergences: " + std::to_string(divergent) +
                           " of " + std::to_string(total) + " transitions");
  return out;
}

}  // namespace lowfr
