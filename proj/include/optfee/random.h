#pragma once

#include <cstdint>
#include <string_view>

namespace optfee {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Seed splitting used everywhere a task needs its own stream:
///   derive_seed(master, index) = splitmix64(master ^ splitmix64(index + 1))
///   derive_seed(master, tag)   = derive_seed(master, fnv1a64(tag))
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept;
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) noexcept;

std::uint64_t fnv1a64(std::string_view text) noexcept;

/// Standard normal quantile (Wichura, AS241 / PPND16). Relative accuracy
/// about 1e-16 on (0, 1); uses only +,*,/,log,sqrt.
double normal_quantile(double p) noexcept;

/// Counter-based generator: draw k of stream (seed, stream) is a pure
/// function of (seed, stream, k), so path i can be regenerated without
/// touching any other path.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(splitmix64(seed ^ splitmix64(stream ^ 0xD1B54A32D192ED03ull))) {}

  std::uint64_t next_u64() noexcept { return splitmix64(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() noexcept { return normal_quantile(uniform()); }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace optfee
