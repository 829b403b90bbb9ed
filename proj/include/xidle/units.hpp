#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace xidle {

/// Energy held as an integer count of microjoules.
///
/// Every GPU-second contributes round(power_W * 1e6) µJ, so sums are exact and
/// independent of summation order. Per-state energies therefore add up to the
/// integrated total bit-for-bit.
class Energy {
public:
  constexpr Energy() = default;

  static constexpr Energy from_microjoules(std::int64_t uj) { return Energy(uj); }

  /// Energy of one sample period at the given power.
  static Energy from_watt_seconds(double watts, double seconds = 1.0)
  {
    const double uj = std::round(watts * seconds * 1e6);
    if (!std::isfinite(uj) || std::fabs(uj) > 9.0e18) {
      throw std::overflow_error("energy out of range");
    }
    return Energy(static_cast<std::int64_t>(uj));
  }

  constexpr std::int64_t microjoules() const { return uj_; }
  constexpr double joules() const { return static_cast<double>(uj_) / 1e6; }

  constexpr Energy& operator+=(Energy o)
  {
    uj_ += o.uj_;
    return *this;
  }
  friend constexpr Energy operator+(Energy a, Energy b) { return a += b; }
  friend constexpr auto operator<=>(Energy, Energy) = default;

private:
  constexpr explicit Energy(std::int64_t uj) : uj_(uj) {}
  std::int64_t uj_ = 0;
};

/// Exact decimal joules, six fractional digits.
inline std::string format_joules(Energy e)
{
  const auto uj = e.microjoules();
  const std::uint64_t mag = uj < 0 ? 0ULL - static_cast<std::uint64_t>(uj) : static_cast<std::uint64_t>(uj);
  auto frac = std::to_string(mag % 1000000);
  frac.insert(0, 6 - frac.size(), '0');
  return (uj < 0 ? "-" : "") + std::to_string(mag / 1000000) + "." + frac;
}

/// Telemetry sample period; every sample stands for one second.
inline constexpr std::int64_t kSamplePeriod = 1;

}  // namespace xidle
