#include "fpelab/rng.hpp"

#include <cmath>
#include <numbers>

namespace fpelab {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// 53-bit uniform in (0,1) from two 32-bit words.
inline double to_open_unit(std::uint32_t a, std::uint32_t b) noexcept {
  const std::uint64_t bits = (static_cast<std::uint64_t>(a >> 5) << 26) | (b >> 6);
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
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

Philox4x32::Counter KeyedRng::block(Stream stream, std::uint64_t path, std::uint32_t mode,
                                    std::uint32_t step) const noexcept {
  const Philox4x32::Counter ctr = {
      step, mode, static_cast<std::uint32_t>(path),
      (static_cast<std::uint32_t>(stream) << 16) | static_cast<std::uint32_t>((path >> 32) & 0xFFFFu)};
  const Philox4x32::Key key = {static_cast<std::uint32_t>(seed_),
                               static_cast<std::uint32_t>(seed_ >> 32)};
  return Philox4x32::generate(ctr, key);
}

std::pair<double, double> KeyedRng::normal_pair(Stream stream, std::uint64_t path, std::uint32_t mode,
                                                std::uint32_t step) const noexcept {
  const auto b = block(stream, path, mode, step);
  const double u1 = to_open_unit(b[0], b[1]);
  const double u2 = to_open_unit(b[2], b[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

double KeyedRng::uniform(Stream stream, std::uint64_t path, std::uint32_t mode,
                         std::uint32_t step) const noexcept {
  const auto b = block(stream, path, mode, step);
  return to_open_unit(b[0], b[1]);
}

}  // namespace fpelab
