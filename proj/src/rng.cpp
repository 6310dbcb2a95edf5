#include "entrep/rng.hpp"

#include <cmath>
#include <numbers>

namespace entrep {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline PhiloxCounter philox_round(const PhiloxCounter& c, const PhiloxKey& k) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mulhilo(kPhiloxM0, c[0], hi0, lo0);
  mulhilo(kPhiloxM1, c[2], hi1, lo1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t join(std::uint32_t lo, std::uint32_t hi) {
  return static_cast<std::uint64_t>(hi) << 32 | lo;
}

std::array<double, 2> box_muller(double u1, double u2) {
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(a), r * std::sin(a)};
}

} // namespace

PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) {
  ctr = philox_round(ctr, key);
  for (int r = 1; r < 10; ++r) {
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
    ctr = philox_round(ctr, key);
  }
  return ctr;
}

std::uint64_t purpose_tag(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

RandomStream::RandomStream(std::uint64_t master_seed, std::string_view purpose, std::uint64_t index)
    : RandomStream(master_seed, purpose_tag(purpose), index) {}

RandomStream::RandomStream(std::uint64_t master_seed, std::uint64_t tag, std::uint64_t index)
    : index_(index) {
  const std::uint64_t k = splitmix64(splitmix64(master_seed) ^ tag);
  key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

PhiloxCounter RandomStream::block_at(std::uint64_t block) const {
  const PhiloxCounter ctr = {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
                             static_cast<std::uint32_t>(index_), static_cast<std::uint32_t>(index_ >> 32)};
  return philox4x32_10(ctr, key_);
}

RandomStream::result_type RandomStream::operator()() {
  if (lanes_left_ == 0) {
    buffer_ = block_at(block_++);
    lanes_left_ = 2;
  }
  const int lane = 2 - lanes_left_--;
  return join(buffer_[2 * lane], buffer_[2 * lane + 1]);
}

double RandomStream::uniform() { return bits_to_open_unit((*this)()); }

double RandomStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const auto z = box_muller(u1, u2);
  cached_normal_ = z[1];
  has_cached_normal_ = true;
  return z[0];
}

std::array<double, 2> RandomStream::uniform_pair_at(std::uint64_t block) const {
  const auto b = block_at(block);
  return {bits_to_open_unit(join(b[0], b[1])), bits_to_open_unit(join(b[2], b[3]))};
}

std::array<double, 2> RandomStream::normal_pair_at(std::uint64_t block) const {
  const auto u = uniform_pair_at(block);
  return box_muller(u[0], u[1]);
}

} // namespace entrep
