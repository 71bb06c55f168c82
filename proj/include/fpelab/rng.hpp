#pragma once

#include <array>
#include <cstdint>
#include <utility>

namespace fpelab {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Stateless:
/// every output block is a pure function of (counter, key).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) noexcept;
};

/// Independent stream families. Each family addresses its own counter space,
/// so adding draws to one family never perturbs another.
enum class Stream : std::uint16_t {
  OuNoise = 0,
  OuCoupled = 1,
  Initial = 2,
  Lift = 3,
  Audit = 4,
  TestSuite = 5,
};

/// Draws keyed by (seed, stream, path, mode, step). Two draws with the same
/// key are bit-identical regardless of thread, order or partitioning.
class KeyedRng {
 public:
  explicit KeyedRng(std::uint64_t seed) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Two independent N(0,1) variates (Box-Muller on one Philox block).
  std::pair<double, double> normal_pair(Stream stream, std::uint64_t path, std::uint32_t mode,
                                        std::uint32_t step) const noexcept;
  double normal(Stream stream, std::uint64_t path, std::uint32_t mode,
                std::uint32_t step) const noexcept {
    return normal_pair(stream, path, mode, step).first;
  }
  /// Uniform on the open interval (0, 1).
  double uniform(Stream stream, std::uint64_t path, std::uint32_t mode,
                 std::uint32_t step) const noexcept;

 private:
  Philox4x32::Counter block(Stream stream, std::uint64_t path, std::uint32_t mode,
                            std::uint32_t step) const noexcept;
  std::uint64_t seed_;
};

}  // namespace fpelab
