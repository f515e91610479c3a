#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace han {

/// SplitMix64 step. Advances `state` and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state);

/// Seed of replication `index` under `base`: the first SplitMix64 output
/// of the state `base + index * golden_gamma`, i.e. the `index`-th element of
/// the SplitMix64 stream started at `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// xoshiro256** generator seeded through SplitMix64.
///
/// Uniform doubles are produced from the top 53 bits, so every draw is
/// bit-identical across compilers and standard libraries. This is what makes
/// result files byte-reproducible from a seed.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Bernoulli(p); p <= 0 never fires, p >= 1 always fires.
  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer on [0, n). Requires n > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> s_{};
};

}  // namespace han
