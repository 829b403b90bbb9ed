#pragma once

// Independent reference implementations used only by tests. Each is written
// the slow, obvious way and shares no code path with the library beyond the
// plain data types.

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "xidle/classifier.hpp"
#include "xidle/telemetry.hpp"

namespace oracle {

/// Maximal low-activity runs found by checking every (i, j) pair.
struct Run {
  std::size_t first;
  std::size_t last;
  friend bool operator==(const Run&, const Run&) = default;
};

inline std::vector<Run> brute_force_runs(const std::vector<xidle::ClassifiedSample>& s, std::int64_t max_gap)
{
  const auto low = [&](std::size_t k) { return s[k].cls == xidle::SampleActivityClass::low_activity_resident; };
  const auto qualifies = [&](std::size_t i, std::size_t j) {
    for (std::size_t k = i; k <= j; ++k) {
      if (!low(k)) return false;
      if (k > i && s[k].timestamp - s[k - 1].timestamp > max_gap) return false;
    }
    return true;
  };
  std::vector<Run> runs;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = i; j < s.size(); ++j) {
      if (!qualifies(i, j)) break;
      const bool left_max = i == 0 || !qualifies(i - 1, j);
      const bool right_max = j + 1 == s.size() || !qualifies(i, j + 1);
      if (left_max && right_max) runs.push_back({i, j});
    }
  }
  return runs;
}

/// Expected (timeline states, intervals as (start, end, duration, microjoules)).
inline std::pair<std::vector<xidle::GpuState>, std::vector<std::tuple<std::int64_t, std::int64_t, std::int64_t, std::int64_t>>>
brute_force_detection(const std::vector<xidle::ClassifiedSample>& s, std::int64_t max_gap, std::int64_t min_interval)
{
  std::vector<xidle::GpuState> states(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    states[k] = s[k].cls == xidle::SampleActivityClass::no_program ? xidle::GpuState::deep_idle : xidle::GpuState::active;
  }
  std::vector<std::tuple<std::int64_t, std::int64_t, std::int64_t, std::int64_t>> intervals;
  for (const auto& r : brute_force_runs(s, max_gap)) {
    const auto span = s[r.last].timestamp - s[r.first].timestamp + 1;
    if (span < min_interval) continue;
    std::int64_t uj = 0;
    for (std::size_t k = r.first; k <= r.last; ++k) {
      states[k] = xidle::GpuState::exec_idle;
      uj += std::llround(s[k].power * 1e6);
    }
    intervals.emplace_back(s[r.first].timestamp, s[r.last].timestamp, span, uj);
  }
  return {states, intervals};
}

/// Reference controller written out line by line on integer ticks t = 1, 2, ... with
/// period eps. Returns, per tick, (c, t_cooldown, downscaled, action) where
/// action is 0 none, 1 downscale, 2 restore.
struct ControllerTrace {
  double c;
  double t_cooldown;
  bool downscaled;
  int action;
};

inline std::vector<ControllerTrace> reference_controller(const std::vector<bool>& idle_at_tick, double X, double Y, double eps)
{
  double c = 0;
  double t_cooldown = 0;
  bool downscaled = false;
  std::vector<ControllerTrace> out;
  for (std::size_t k = 0; k < idle_at_tick.size(); ++k) {
    const double t = static_cast<double>(k + 1) * eps;
    int action = 0;
    if (idle_at_tick[k]) {
      c = c + eps;
    } else {
      c = 0;
      if (downscaled) {
        action = 2;  // SetFrequency(f_max)
        t_cooldown = t + Y;
        downscaled = false;
      }
    }
    if (c > X && t >= t_cooldown && !downscaled) {
      action = 1;  // SetFrequency(f_min)
      downscaled = true;
    }
    out.push_back({c, t_cooldown, downscaled, action});
  }
  return out;
}

/// Keep-first dedup on (host, gpu, timestamp) with a set of seen keys.
inline std::vector<xidle::TelemetrySample> dedup(const std::vector<xidle::TelemetrySample>& in)
{
  std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
  std::vector<xidle::TelemetrySample> out;
  for (const auto& s : in) {
    if (seen.insert({s.hostname, s.gpu_id, s.timestamp}).second) out.push_back(s);
  }
  return out;
}

/// Nearest rank by counting: smallest value v with #{x <= v} >= q * n.
template <typename T>
T nearest_rank_by_count(const std::vector<T>& data, double q)
{
  T best{};
  bool found = false;
  for (const auto& v : data) {
    std::size_t le = 0;
    for (const auto& x : data) le += x <= v;
    if (static_cast<double>(le) >= q * static_cast<double>(data.size()) - 1e-9 && (!found || v < best)) {
      best = v;
      found = true;
    }
  }
  return best;
}

}  // namespace oracle
