#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lowfr/diagnostics.hpp"
#include "lowfr/matrix.hpp"
#include "lowfr/nuts.hpp"

using namespace lowfr;

namespace {

Target std_normal_target(int dim) {
  Target t;
  t.dim = dim;
  t.logp_grad = [dim](const Vec& q, Vec* g) {
    if (g) *g = -q;
    return -0.5 * q.squaredNorm();
  };
  return t;
}

Target cs_gaussian_target(int dim, double rho) {
  const CompoundSymmetric cs(dim, rho);
  const Mat P = cs.inverse();
  Target t;
  t.dim = dim;
  t.logp_grad = [P](const Vec& q, Vec* g) {
    const Vec Pq = P * q;
    if (g) *g = -Pq;
    return -0.5 * q.dot(Pq);
  };
  return t;
}

}  // namespace

TEST_CASE("transition kernel recovers standard normal moments", "[nuts]") {
  const Target t = std_normal_target(1);
  RngStream rng(301, 0);
  Vec state = Vec::Constant(1, 1.0);
  const Vec inv_mass = Vec::Ones(1);
  const int n = 5000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    auto [next, st] = nuts_draw(t, state, 0.9, inv_mass, rng);
    state = next;
    sum += state[0];
    sum2 += state[0] * state[0];
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("correlated Gaussian means are centered", "[nuts]") {
  const int dim = 10;
  Target t = cs_gaussian_target(dim, 0.8);
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 500;
  cfg.samples = 1000;
  cfg.seed = 303;
  const PosteriorDraws out = run_chains(t, cfg);
  REQUIRE(out.n_chains() == 2);
  REQUIRE(out.n_samples() == 1000);

  for (int c = 0; c < dim; ++c) {
    const auto seqs = out.parameter(c);
    double total = 0.0, total2 = 0.0;
    for (const Vec& s : seqs) {
      total += s.sum();
      total2 += s.squaredNorm();
    }
    const double nn = 2.0 * 1000.0;
    const double mean = total / nn;
    const double sd = std::sqrt(total2 / nn - mean * mean);
    const double ess = ess_bulk(seqs);
    REQUIRE(std::isfinite(ess));
    const double se = sd / std::sqrt(std::max(ess, 1.0));
    CAPTURE(c, mean, se, ess);
    CHECK(std::abs(mean) < 3.0 * se);
  }
}

TEST_CASE("flat target produces symmetric proposals", "[nuts]") {
  Target t;
  t.dim = 2;
  t.logp_grad = [](const Vec& q, Vec* g) {
    if (g) *g = Vec::Zero(q.size());
    return 0.0;
  };
  RngStream rng(305, 0);
  Vec state = Vec::Zero(2);
  const Vec inv_mass = Vec::Ones(2);
  const int n = 1000;
  Vec incr_sum = Vec::Zero(2), incr_sum2 = Vec::Zero(2);
  for (int i = 0; i < n; ++i) {
    auto [next, st] = nuts_draw(t, state, 0.1, inv_mass, rng, 6);
    CHECK_FALSE(st.divergent);
    const Vec d = next - state;
    incr_sum += d;
    incr_sum2 += d.cwiseProduct(d);
    state = next;
  }
  for (int c = 0; c < 2; ++c) {
    const double mean = incr_sum[c] / n;
    const double var = incr_sum2[c] / n - mean * mean;
    const double se = std::sqrt(var / n);
    CHECK(std::abs(mean) < 3.0 * se);
  }
}

TEST_CASE("leapfrog runs backward to the start", "[nuts]") {
  const Target t = cs_gaussian_target(4, 0.5);
  RngStream rng(307, 0);
  nuts_detail::PhasePoint z;
  z.q = Vec(4);
  z.p = Vec(4);
  for (int i = 0; i < 4; ++i) {
    z.q[i] = rng.normal();
    z.p[i] = rng.normal();
  }
  const Vec q0 = z.q, p0 = z.p;
  z.logp = t.logp_grad(z.q, &z.grad);
  const Vec inv_mass = Vec::Ones(4);
  const int L = 25;
  const double eps = 0.01;
  for (int s = 0; s < L; ++s) REQUIRE(nuts_detail::leapfrog(t, z, eps, inv_mass));
  z.p = -z.p;
  for (int s = 0; s < L; ++s) REQUIRE(nuts_detail::leapfrog(t, z, eps, inv_mass));
  z.p = -z.p;
  CHECK((z.q - q0).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((z.p - p0).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("energy error shrinks quadratically with the stepsize", "[nuts]") {
  const Target t = cs_gaussian_target(4, 0.3);
  const Vec inv_mass = Vec::Ones(4);
  auto mean_abs_dH = [&](double eps) {
    RngStream rng(309, 0);  // same trajectories for both stepsizes
    double acc = 0.0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
      nuts_detail::PhasePoint z;
      z.q = Vec(4);
      z.p = Vec(4);
      for (int i = 0; i < 4; ++i) {
        z.q[i] = rng.normal();
        z.p[i] = rng.normal();
      }
      z.logp = t.logp_grad(z.q, &z.grad);
      const double h0 = z.hamiltonian(inv_mass);
      for (int s = 0; s < 8; ++s) REQUIRE(nuts_detail::leapfrog(t, z, eps, inv_mass));
      acc += std::abs(z.hamiltonian(inv_mass) - h0);
    }
    return acc / reps;
  };
  const double big = mean_abs_dH(0.2);
  const double small = mean_abs_dH(0.1);
  const double factor = big / small;
  CAPTURE(big, small);
  CHECK(factor > 2.5);
  CHECK(factor < 6.0);
}

TEST_CASE("adaptation lands near the target acceptance rate", "[nuts]") {
  Target t = std_normal_target(5);
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 500;
  cfg.samples = 1000;
  cfg.seed = 311;
  cfg.target_accept = 0.8;
  const PosteriorDraws out = run_chains(t, cfg);
  double acc = 0.0;
  int n = 0;
  for (const auto& chain_stats : out.stats)
    for (const auto& st : chain_stats) {
      acc += st.accept_stat;
      ++n;
      CHECK(st.stepsize > 0.0);
      CHECK(st.treedepth <= cfg.max_treedepth);
    }
  acc /= n;
  CHECK(std::abs(acc - cfg.target_accept) < 0.1);

  // iid-quality sampling on an easy target.
  double min_ess = 1e30;
  for (int c = 0; c < 5; ++c) min_ess = std::min(min_ess, ess_bulk(out.parameter(c)));
  CHECK(min_ess > 0.4 * cfg.chains * cfg.samples);
}

TEST_CASE("runs are seed-deterministic and scheduling-independent", "[nuts]") {
  Target t = cs_gaussian_target(3, 0.5);
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 200;
  cfg.samples = 300;
  cfg.seed = 313;

  const PosteriorDraws a = run_chains(t, cfg);
  const PosteriorDraws b = run_chains(t, cfg);
  SamplerConfig cfg_par = cfg;
  cfg_par.jobs = 2;
  const PosteriorDraws c = run_chains(t, cfg_par);

  REQUIRE(a.n_chains() == b.n_chains());
  REQUIRE(a.n_chains() == c.n_chains());
  for (int ch = 0; ch < a.n_chains(); ++ch) {
    CHECK((a.chains[ch] - b.chains[ch]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.chains[ch] - c.chains[ch]).cwiseAbs().maxCoeff() == 0.0);
  }

  SamplerConfig cfg2 = cfg;
  cfg2.seed = 314;
  const PosteriorDraws d = run_chains(t, cfg2);
  CHECK((a.chains[0] - d.chains[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("hopeless targets fail loudly", "[nuts]") {
  Target t;
  t.dim = 2;
  t.logp_grad = [](const Vec&, Vec* g) {
    if (g) *g = Vec::Zero(2);
    return -std::numeric_limits<double>::infinity();
  };
  SamplerConfig cfg;
  cfg.chains = 1;
  cfg.warmup = 50;
  cfg.samples = 50;
  CHECK_THROWS_AS(run_chains(t, cfg), InferenceError);

  SamplerConfig bad;
  bad.chains = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = SamplerConfig{};
  bad.target_accept = 1.5;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}
