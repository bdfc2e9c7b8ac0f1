#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace gsde {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// A block is a pure function of (counter, key), so any path's stream can be
/// regenerated from its identifiers without shared state.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static constexpr Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }
};

/// Stream of uniforms/normals for one (seed, path, substream) triple.
/// The low two counter words index blocks; the high two hold path and substream.
class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t path, std::uint32_t substream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        path_lo_(static_cast<std::uint32_t>(path)),
        path_hi_((static_cast<std::uint32_t>(path >> 32) & 0x00FFFFFFu) | (substream << 24)) {}

  /// Block at an explicit counter; does not advance the stream.
  Philox4x32::Counter block_at(std::uint64_t index) const {
    return Philox4x32::block(
        {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), path_lo_, path_hi_}, key_);
  }

  /// Uniform in (0, 1) at an explicit counter.
  double uniform_at(std::uint64_t index) const {
    const auto b = block_at(index);
    return to_unit(b[0], b[1]);
  }

  double uniform() {
    const auto b = block_at(counter_++);
    return to_unit(b[0], b[1]);
  }

  /// Standard normal via Box-Muller; one block yields two draws.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const auto b = block_at(counter_++);
    const double u1 = to_unit(b[0], b[1]);
    const double u2 = to_unit(b[2], b[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  static double to_unit(std::uint32_t lo, std::uint32_t hi) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  Philox4x32::Key key_;
  std::uint32_t path_lo_;
  std::uint32_t path_hi_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gsde
