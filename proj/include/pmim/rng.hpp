#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pmim/errors.hpp"
#include "pmim/mat.hpp"

namespace pmim {

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distribution mappings below are pinned here instead of using
// std::*_distribution, whose output sequences are implementation-defined.
class Rng {
 public:
  Rng() : gen_(0) {}
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Named substream, derived from a base seed rather than from the
  // current state, so components can be reordered without perturbing
  // each other's draws.
  static Rng substream(std::uint64_t base_seed, std::string_view name) {
    return Rng(fnv1a64(name, base_seed ^ 0x9e3779b97f4a7c15ull));
  }
  static Rng substream(std::uint64_t base_seed, std::string_view name,
                       std::uint64_t index) {
    std::uint64_t h = fnv1a64(name, base_seed ^ 0x9e3779b97f4a7c15ull);
    h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return Rng(h);
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    PMIM_CHECK(n > 0, "Rng::below requires n > 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  int below_int(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller without caching so the draw count per call is fixed.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Normal(0, std) truncated to [-2 std, 2 std], the usual ViT init.
  double trunc_normal(double stddev) {
    double x;
    do {
      x = normal();
    } while (std::abs(x) > 2.0);
    return x * stddev;
  }

  // Partial Fisher-Yates: uniformly random k-subset of {0..n-1}, unsorted.
  std::vector<int> sample_without_replacement(int n, int k) {
    PMIM_CHECK(k >= 0 && k <= n, "sample size out of range");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + below_int(n - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = below_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  // Textual state, round-trips bitwise (used by checkpoints).
  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }
  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    PMIM_CHECK_DATA(!is.fail(), "invalid serialized RNG state");
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace pmim
