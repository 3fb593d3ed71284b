#ifndef PCRHC_RNG_HPP_
#define PCRHC_RNG_HPP_

#include <cmath>
#include <cstdint>

namespace pcrhc {

// Counter-based generator: draw i of stream s under seed is a fixed bijective
// finalizer (splitmix64) applied to an affine combination of (seed, s, i).
// No hidden state, so draws can be indexed out of order or in parallel and
// the sequence is identical for identical (seed, stream, index) everywhere
// the same IEEE-754 libm is used.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : base_(finalize(seed + 0x9E3779B97F4A7C15ull * (stream + 1))) {}

  static std::uint64_t finalize(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t word(std::uint64_t index) const {
    return finalize(base_ + 0xD1B54A32D192ED03ull * (index + 1));
  }

  /// Draw `index` mapped to [0, 1) with 53-bit resolution.
  double uniform01(std::uint64_t index) const {
    return static_cast<double>(word(index) >> 11) * 0x1.0p-53;
  }

  /// Draw `index` mapped to (0, 1] (safe under log).
  double uniform01_open(std::uint64_t index) const {
    return (static_cast<double>(word(index) >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on draws (2*index, 2*index + 1).
  double normal(std::uint64_t index) const {
    const double u1 = uniform01_open(2 * index);
    const double u2 = uniform01(2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Sequential convenience interface.
  double next_uniform01() { return uniform01(cursor_++); }
  double next_normal() { return normal(cursor_++); }

 private:
  std::uint64_t base_;
  std::uint64_t cursor_ = 0;
};

}  // namespace pcrhc

#endif  // PCRHC_RNG_HPP_
