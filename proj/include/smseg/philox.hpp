#pragma once

#include <array>
#include <cstdint>

namespace smseg {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
///
/// Stream layout used throughout the library for a 64-bit seed:
///   key     = (seed & 0xffffffff, seed >> 32)
///   counter = (block & 0xffffffff, block >> 32, 0, 0)
/// Element i of a normal stream comes from block i / 2 via Box-Muller:
///   a  = ((x1 << 32) | x0) >> 11,  b = ((x3 << 32) | x2) >> 11
///   u1 = (a + 0.5) * 2^-53,        u2 = (b + 0.5) * 2^-53
///   r  = sqrt(-2 ln u1)
///   even i -> r cos(2 pi u2), odd i -> r sin(2 pi u2)
/// evaluated in double precision.
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key);

class PhiloxStream {
 public:
  explicit PhiloxStream(std::uint64_t seed) : seed_(seed) {}

  /// Raw 128-bit block for a given block index.
  PhiloxCounter block(std::uint64_t index) const;

  /// Uniform double in (0, 1) for element i (53-bit resolution, never 0 or 1).
  double uniform(std::uint64_t i) const;

  /// Standard normal for element i, per the documented Box-Muller layout.
  double normal(std::uint64_t i) const;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace smseg
