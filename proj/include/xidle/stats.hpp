#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace xidle::stats {

struct CdfPoint {
  double value = 0.0;
  double cumulative = 0.0;  ///< fraction of observations <= value

  friend bool operator==(const CdfPoint&, const CdfPoint&) = default;
};

/// Nearest-rank quantile of already sorted data: element ceil(q * n), 1-based.
template <typename T>
T nearest_rank_sorted(const std::vector<T>& sorted, double q)
{
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  if (q <= 0.0) return sorted.front();
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-12));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

template <typename T>
T nearest_rank(std::vector<T> data, double q)
{
  std::sort(data.begin(), data.end());
  return nearest_rank_sorted(data, q);
}

/// Conventional median: middle element, or the midpoint of the two middle
/// elements for even counts.
inline double median(std::vector<double> data)
{
  if (data.empty()) throw std::invalid_argument("median of empty data");
  std::sort(data.begin(), data.end());
  const auto n = data.size();
  if (n % 2 == 1) return data[n / 2];
  return 0.5 * (data[n / 2 - 1] + data[n / 2]);
}

/// Empirical CDF: one point per distinct value.
template <typename T>
std::vector<CdfPoint> empirical_cdf(std::vector<T> data)
{
  std::sort(data.begin(), data.end());
  std::vector<CdfPoint> out;
  const auto n = static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i + 1 < data.size() && data[i + 1] == data[i]) continue;
    out.push_back({static_cast<double>(data[i]), static_cast<double>(i + 1) / n});
  }
  return out;
}

/// Fraction of observations strictly greater than threshold.
template <typename T>
double share_above(const std::vector<T>& data, double threshold)
{
  if (data.empty()) return 0.0;
  const auto k = std::count_if(data.begin(), data.end(),
                               [&](const T& v) { return static_cast<double>(v) > threshold; });
  return static_cast<double>(k) / static_cast<double>(data.size());
}

}  // namespace xidle::stats
