#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dfedrw {

// splitmix64 step; used both as a mixer and to derive stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine64(std::uint64_t seed, std::uint64_t v) {
  std::uint64_t s = seed ^ (v + 0x9E3779B97F4A7C15ULL + (seed << 6) + (seed >> 2));
  return splitmix64(s);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Deterministic random stream. All draws go through explicit mappings so
// outputs do not depend on the standard library's distribution internals.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform01() { return double(eng_() >> 11) * 0x1.0p-53; }

  // uniform integer in [lo, hi], inclusive
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = std::uint64_t(hi - lo) + 1;
    // multiply-shift mapping; bias < 2^-64, irrelevant at desk scale
    const unsigned __int128 wide = (unsigned __int128)eng_() * span;
    return lo + std::int64_t(wide >> 64);
  }

  // standard normal via Box-Muller; consumes two uniforms per value
  double gaussian() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Marsaglia-Tsang gamma(alpha, 1), alpha > 0
  double gamma(double alpha) {
    if (alpha < 1.0) {
      const double u = uniform01();
      return gamma(alpha + 1.0) * std::pow(u > 0 ? u : 0x1.0p-53, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = gaussian();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Fisher-Yates; `out` may be any prefilled vector
  template <typename T>
  void shuffle(std::vector<T>& out) {
    for (std::size_t i = out.size(); i > 1; --i) {
      const std::size_t j = std::size_t(uniform_int(0, std::int64_t(i) - 1));
      std::swap(out[i - 1], out[j]);
    }
  }

  // k distinct values sampled uniformly from [0, n); returned unsorted
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[std::size_t(i)] = i;
    std::vector<int> out;
    out.reserve(std::size_t(k));
    for (int i = 0; i < k; ++i) {
      const std::size_t j = std::size_t(uniform_int(i, n - 1));
      std::swap(pool[std::size_t(i)], pool[j]);
      out.push_back(pool[std::size_t(i)]);
    }
    return out;
  }

 private:
  std::mt19937_64 eng_;
};

// Counter-based fan-out: stream identity is (master, purpose, t, m), never
// the order in which streams get created.
inline RngStream seed_stream(std::uint64_t master, std::string_view purpose,
                             std::uint64_t t = 0, std::uint64_t m = 0) {
  std::uint64_t h = hash_combine64(master, hash_tag(purpose));
  h = hash_combine64(h, t);
  h = hash_combine64(h, m);
  return RngStream(h);
}

}  // namespace dfedrw
