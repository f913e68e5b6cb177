#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>

#include "flowcf/error.hpp"

namespace flowcf {

// Deterministic RNG threaded explicitly through every stochastic operation.
// xoshiro256++ with splitmix64 seeding: tiny state, trivially serializable,
// and identical output on every platform (unlike std:: distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      // splitmix64
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      s = z ^ (z >> 31);
    }
    has_cached_normal_ = false;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw ValueError("Rng::uniform_index: n must be positive");
    // Rejection-free modulo bias is negligible for our n << 2^64, but use
    // Lemire's multiply-shift anyway.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via Box-Muller (cached second value).
  double normal() {
    if (has_cached_normal_) {
      has_cached_normal_ = false;
      return cached_normal_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates shuffle of an index-addressable container.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // State serialization for checkpoints: 4 hex words + cache flag/value.
  std::string save_state() const {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%016llx %016llx %016llx %016llx %d %a",
                  (unsigned long long)state_[0], (unsigned long long)state_[1],
                  (unsigned long long)state_[2], (unsigned long long)state_[3],
                  has_cached_normal_ ? 1 : 0, cached_normal_);
    return std::string(buf);
  }

  void load_state(const std::string& text) {
    unsigned long long s0, s1, s2, s3;
    int flag;
    double cached;
    if (std::sscanf(text.c_str(), "%llx %llx %llx %llx %d %la", &s0, &s1, &s2,
                    &s3, &flag, &cached) != 6) {
      throw FormatError("Rng::load_state: malformed state string");
    }
    state_ = {s0, s1, s2, s3};
    has_cached_normal_ = flag != 0;
    cached_normal_ = cached;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace flowcf
