#pragma once

#include <array>
#include <cstdint>

namespace mlmc {

/// What a random stream is used for. Part of the stream identity, so pilot or
/// optimizer draws never overlap estimation draws.
enum class Purpose : std::uint8_t {
  estimation = 0,
  pilot = 1,
  optimizer = 2,
  inner = 3,
  outer = 4,
};

/// Identity of one independent random stream. Equal keys give equal streams
/// regardless of which worker thread asks or in which order.
struct StreamKey {
  std::uint64_t seed = 0;
  int level = 0;
  std::uint64_t replicate = 0;
  Purpose purpose = Purpose::estimation;

  friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter counter, Key key) noexcept;
};

/// Sequential view over the Philox output for one StreamKey. Cheap to
/// construct; holds no shared state.
class RandomStream {
 public:
  explicit RandomStream(const StreamKey& key) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;

  /// Standard normal via Box-Muller on two uniforms.
  double normal() noexcept;

  /// Number of variates (uniform or normal) delivered so far.
  std::uint64_t draws() const noexcept { return draws_; }

 private:
  void refill() noexcept;

  Philox4x32::Key key_{};
  Philox4x32::Counter counter_{};
  std::array<std::uint64_t, 2> block_{};
  int block_pos_ = 2;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
  std::uint64_t draws_ = 0;
};

/// SplitMix64 finalizer, used to derive child seeds (e.g. per replicate).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

}  // namespace mlmc
