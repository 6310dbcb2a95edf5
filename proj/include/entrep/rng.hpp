#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

namespace entrep {

/// Philox4x32-10 block function (Salmon et al., Random123). Maps a 128-bit
/// counter and a 64-bit key to 128 pseudo-random bits; stateless.
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;
PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key);

/// 64-bit FNV-1a of a purpose label; used as the `tag` component of a stream.
std::uint64_t purpose_tag(std::string_view label);

/// A reproducible random stream identified by (master_seed, purpose, index).
///
/// State transition: the key is derived once from (master_seed, purpose tag);
/// the counter is (block, index) with `block` incremented by one per 128-bit
/// draw. Any block can also be read directly with `block_at`, which is what
/// the parallel Gibbs colour sweeps use so that results do not depend on the
/// thread schedule.
class RandomStream {
public:
  using result_type = std::uint64_t;

  RandomStream(std::uint64_t master_seed, std::string_view purpose, std::uint64_t index);
  RandomStream(std::uint64_t master_seed, std::uint64_t tag, std::uint64_t index);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal via Box-Muller; pairs are cached.
  double normal();

  /// Random access: the 128 bits of block `block`, without touching the cursor.
  PhiloxCounter block_at(std::uint64_t block) const;
  /// Two independent standard normals derived from block `block`.
  std::array<double, 2> normal_pair_at(std::uint64_t block) const;
  /// Two independent uniforms on (0,1) derived from block `block`.
  std::array<double, 2> uniform_pair_at(std::uint64_t block) const;

  std::uint64_t blocks_consumed() const { return block_; }

private:
  PhiloxKey key_{};
  std::uint64_t index_ = 0;
  std::uint64_t block_ = 0;
  PhiloxCounter buffer_{};
  int lanes_left_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// Map 64 random bits to a double in (0, 1).
inline double bits_to_open_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

} // namespace entrep
