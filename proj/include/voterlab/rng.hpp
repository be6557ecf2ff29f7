#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace voterlab {

namespace detail {

// Tables for the Marsaglia-Tsang ziggurat sampler of Exp(1), 256 layers,
// indexed by 53-bit integers.
struct ExpZiggurat {
  std::array<std::uint64_t, 256> k{};
  std::array<double, 256> w{};
  std::array<double, 256> f{};

  static constexpr double kR = 7.697117470131487;
  static constexpr double kV = 3.949659822581572e-3;

  ExpZiggurat() {
    const double m = 9007199254740992.0;  // 2^53
    double de = kR;
    double te = de;
    const double q = kV / std::exp(-de);
    k[0] = static_cast<std::uint64_t>((de / q) * m);
    k[1] = 0;
    w[0] = q / m;
    w[255] = de / m;
    f[0] = 1.0;
    f[255] = std::exp(-de);
    for (int i = 254; i >= 1; --i) {
      de = -std::log(kV / de + std::exp(-de));
      k[i + 1] = static_cast<std::uint64_t>((de / te) * m);
      te = de;
      f[i] = std::exp(-de);
      w[i] = de / m;
    }
  }
};

inline const ExpZiggurat kExpZiggurat{};

}  // namespace detail

// SplitMix64 finalizer. Used both as a seed expander and as the mixing
// function of the counter-based stream derivation below.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Substream key for replica `replica` of experiment `experiment` under a
// master seed. Pure function of its arguments; never depends on scheduling.
constexpr std::uint64_t derive_stream_key(std::uint64_t seed, std::uint64_t experiment,
                                          std::uint64_t replica) noexcept {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (experiment * 0xd1b54a32d192ed03ULL));
  h = splitmix64(h ^ (replica * 0xa0761d6478bd642fULL));
  return h;
}

// xoshiro256++ (Blackman & Vigna). Satisfies UniformRandomBitGenerator so it
// can drive <random> distributions.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t key = 0) noexcept { reseed(key); }

  void reseed(std::uint64_t key) noexcept {
    std::uint64_t x = key;
    for (auto& word : state_) {
      x = splitmix64(x);
      word = x;
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
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
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe argument for log().
  double uniform_open0() noexcept {
    return static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53;
  }

  // Exp(1) by the ziggurat method; exact in distribution, one draw and no
  // transcendental call on ~98.9% of samples.
  double standard_exponential() noexcept {
    const auto& z = detail::kExpZiggurat;
    for (;;) {
      const std::uint64_t r = (*this)();
      const auto layer = static_cast<std::size_t>(r & 255u);
      const std::uint64_t j = r >> 11;
      if (j < z.k[layer]) return static_cast<double>(j) * z.w[layer];
      if (layer == 0) return detail::ExpZiggurat::kR - std::log(uniform_open0());
      const double x = static_cast<double>(j) * z.w[layer];
      if (z.f[layer] + uniform() * (z.f[layer - 1] - z.f[layer]) < std::exp(-x)) return x;
    }
  }

  // Exponential with the given rate.
  double exponential(double rate) noexcept { return standard_exponential() / rate; }

  // Uniform integer in [0, n) by Lemire's multiply-shift on 32 random bits.
  // Bias is below n / 2^32, negligible for the lattice sizes used here.
  std::uint32_t below(std::uint32_t n) noexcept {
    const auto r = static_cast<std::uint32_t>((*this)() >> 32);
    return static_cast<std::uint32_t>((static_cast<std::uint64_t>(r) * n) >> 32);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

// Stream for one replica cell.
inline Xoshiro256 make_stream(std::uint64_t seed, std::uint64_t experiment, std::uint64_t replica) {
  return Xoshiro256(derive_stream_key(seed, experiment, replica));
}

}  // namespace voterlab
