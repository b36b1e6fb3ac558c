#include "mlmc/random.hpp"

#include <cmath>
#include <numbers>

namespace mlmc {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) noexcept {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

}  // namespace

Philox4x32::Counter Philox4x32::generate(Counter ctr, Key key) noexcept {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

RandomStream::RandomStream(const StreamKey& key) noexcept {
  key_ = {static_cast<std::uint32_t>(key.seed),
          static_cast<std::uint32_t>(key.seed >> 32)};
  // Layout: [block index | purpose:8 level:24 | replicate lo | replicate hi].
  counter_ = {0u,
              (static_cast<std::uint32_t>(key.purpose) << 24) |
                  (static_cast<std::uint32_t>(key.level) & 0x00FFFFFFu),
              static_cast<std::uint32_t>(key.replicate),
              static_cast<std::uint32_t>(key.replicate >> 32)};
}

void RandomStream::refill() noexcept {
  const auto out = Philox4x32::generate(counter_, key_);
  ++counter_[0];
  block_[0] = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
  block_[1] = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
  block_pos_ = 0;
}

std::uint64_t RandomStream::next_u64() noexcept {
  if (block_pos_ == 2) refill();
  return block_[block_pos_++];
}

double RandomStream::uniform() noexcept {
  ++draws_;
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomStream::normal() noexcept {
  ++draws_;
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace mlmc
