#pragma once

// Deterministic random streams.  mt19937_64 has a fully specified output
// sequence; the variate transforms below are hand-rolled because the std::
// distributions are implementation-defined and would break the byte-identical
// output guarantee the CLI makes.  Every consumer derives its stream from
// (seed, stream id) so results do not depend on scheduling or chain order.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lowfr/errors.hpp"
#include "lowfr/matrix.hpp"

namespace lowfr {

namespace detail {
// splitmix64, used only to spread (seed, stream) into engine seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
      : engine_(detail::splitmix64(detail::splitmix64(seed) ^
                                   detail::splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1))) {}

  // Uniform on [0, 1).
  double uniform() {
    return double(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in {0, ..., n-1}.
  int uniform_int(int n) {
    if (n <= 0) throw UsageError("uniform_int: n must be positive");
    return int(double(n) * uniform());
  }

  // Standard normal via Marsaglia polar; rejection count is part of the
  // deterministic stream.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  Vec normal_vec(int n) {
    Vec out(n);
    for (int i = 0; i < n; ++i) out[i] = normal();
    return out;
  }

  double exponential() { return -std::log(1.0 - uniform()); }

  // Marsaglia-Tsang for shape >= 1, boosted for shape < 1.  Rate
  // parameterization: mean = shape / rate.
  double gamma(double shape, double rate) {
    if (!(shape > 0.0) || !(rate > 0.0))
      throw UsageError("gamma: shape and rate must be positive");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  double inv_gamma(double shape, double scale) {
    return scale / gamma(shape, 1.0);
  }

  Vec dirichlet(int n) {
    Vec g(n);
    for (int i = 0; i < n; ++i) g[i] = gamma(1.0, 1.0);
    return g / g.sum();
  }

  // k distinct indices from {0, ..., n-1}, order of selection preserved.
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k > n) throw UsageError("sample_without_replacement: k > n");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out;
    out.reserve(k);
    for (int j = 0; j < k; ++j) {
      const int pick = uniform_int(n - j);
      out.push_back(pool[pick]);
      pool[pick] = pool[n - 1 - j];
    }
    return out;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lowfr
