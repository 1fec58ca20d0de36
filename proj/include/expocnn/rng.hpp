#pragma once

#include <cstdint>

namespace expocnn {

/// SplitMix64 finalizer (Steele, Lea & Flood). Used both to expand seeds and
/// to derive substream keys.
///   z += 0x9E3779B97F4A7C15
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   z ^= z >> 31
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256** 1.0 (Blackman & Vigna), state seeded by four SplitMix64 draws.
///
/// The integer sequence is fully specified by the seed and identical on every
/// platform. Floating-point helpers derive from the top bits only:
///   uniform()  = (next() >> 11) * 2^-53          in [0, 1)
///   normal()   = Box-Muller on two uniform() draws (one value per call)
///
/// An Rng is single-owner. Parallel users derive independent substreams with
/// Rng::substream(master_seed, index); a substream never depends on how many
/// draws other substreams made.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;

  /// Generator keyed by (master_seed, index). Two different indices under the
  /// same master seed give unrelated streams.
  static Rng substream(std::uint64_t master_seed, std::uint64_t index) noexcept;

  std::uint64_t next() noexcept;

  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;

  /// Uniform integer in the inclusive range [lo, hi], by rejection so every
  /// value is exactly equiprobable.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;

  /// Standard normal deviate.
  double normal() noexcept;

  std::uint64_t operator()() noexcept { return next(); }
  static constexpr std::uint64_t min() noexcept { return 0; }
  static constexpr std::uint64_t max() noexcept { return ~std::uint64_t{0}; }
  using result_type = std::uint64_t;

 private:
  std::uint64_t s_[4];
};

/// Stream tags so that unrelated consumers of one user seed never collide.
namespace stream {
inline constexpr std::uint64_t kInit = 0x1001;
inline constexpr std::uint64_t kSplit = 0x2002;
inline constexpr std::uint64_t kEpochShuffle = 0x3003;
inline constexpr std::uint64_t kSweep = 0x4004;
}  // namespace stream

}  // namespace expocnn
