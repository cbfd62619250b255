#pragma once

#include <cstdint>
#include <initializer_list>

namespace divcon {

/// Stream identifiers keep independent uses of one seed from colliding.
enum class Stream : std::uint64_t {
  RaySelect = 1,
  SphereDraw = 2,
  Jitter = 3,
  Init = 4,
  Camera = 5,
  Audit = 6,
  Probe = 7,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: the state is a key derived from
/// (seed, stream, iteration, item) plus a position counter, so any draw can be
/// reproduced without replaying earlier ones. Parallel schedules therefore see
/// the same numbers as a serial loop.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream, std::uint64_t iteration = 0, std::uint64_t item = 0)
      : key_(derive_key({seed, static_cast<std::uint64_t>(stream), iteration, item})) {}

  std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Multiply-shift keeps the mapping bias below 2^-64 * n.
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  std::uint64_t key() const { return key_; }

 private:
  static constexpr std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace divcon
