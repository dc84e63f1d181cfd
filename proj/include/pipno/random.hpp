#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace pipno::rng {

/// Identity string written into manifests.
inline constexpr std::string_view kGeneratorName = "philox4x32-10+box-muller";

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

/// One Philox4x32-10 block: a bijection of the counter keyed by `key`.
Counter philox4x32_10(Counter counter, Key key);

/// Deterministic random stream addressed by (seed, stream id).
///
/// Output depends only on the pair and the number of draws, never on
/// platform-specific standard-library distributions.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

 private:
  Key key_{};
  Counter counter_{};
  Counter block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pipno::rng
