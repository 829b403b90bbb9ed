#pragma once

// Time and energy accounting over classified telemetry.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xidle/classifier.hpp"
#include "xidle/stats.hpp"
#include "xidle/telemetry.hpp"
#include "xidle/units.hpp"

namespace xidle {

/// Rectangle rule at the 1 Hz sample period: each sample contributes
/// power * 1 s, missing seconds contribute nothing.
inline Energy integrate_energy(std::span<const TelemetrySample> samples)
{
  Energy total;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i > 0 && samples[i].timestamp <= samples[i - 1].timestamp) {
      throw std::invalid_argument("integrate_energy: samples must be in strictly increasing timestamp order");
    }
    total += Energy::from_watt_seconds(samples[i].power, kSamplePeriod);
  }
  return total;
}

struct StateBreakdown {
  std::array<std::int64_t, 3> time{};  ///< seconds, indexed by GpuState
  std::array<Energy, 3> energy{};
  std::int64_t total_time = 0;
  Energy total_energy;

  std::int64_t time_in(GpuState s) const { return time[static_cast<std::size_t>(s)]; }
  Energy energy_in(GpuState s) const { return energy[static_cast<std::size_t>(s)]; }

  StateBreakdown& operator+=(const StateBreakdown& o)
  {
    for (std::size_t i = 0; i < 3; ++i) {
      time[i] += o.time[i];
      energy[i] += o.energy[i];
    }
    total_time += o.total_time;
    total_energy += o.total_energy;
    return *this;
  }

  friend bool operator==(const StateBreakdown&, const StateBreakdown&) = default;
};

/// Credits each sample's second and energy to its timeline state. The
/// totals are accumulated independently of the per-state sums.
inline StateBreakdown state_breakdown(const StateTimeline& timeline, std::span<const TelemetrySample> samples)
{
  if (timeline.entries.size() != samples.size()) {
    throw std::invalid_argument("state_breakdown: timeline and samples differ in length");
  }
  StateBreakdown b;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (timeline.entries[i].timestamp != samples[i].timestamp) {
      throw std::invalid_argument("state_breakdown: timestamp mismatch at " + std::to_string(samples[i].timestamp));
    }
    const auto e = Energy::from_watt_seconds(samples[i].power, kSamplePeriod);
    const auto idx = static_cast<std::size_t>(timeline.entries[i].state);
    b.time[idx] += kSamplePeriod;
    b.energy[idx] += e;
    b.total_time += kSamplePeriod;
    b.total_energy += e;
  }
  return b;
}

/// Execution-idle share of in-execution time and energy; deep idle is
/// excluded from the denominator.
struct FractionReport {
  double time_fraction = 0.0;
  double energy_fraction = 0.0;
};

inline FractionReport in_execution_fractions(const StateBreakdown& b)
{
  FractionReport r;
  const auto et = b.time_in(GpuState::exec_idle);
  const auto at = b.time_in(GpuState::active);
  if (et + at > 0) r.time_fraction = static_cast<double>(et) / static_cast<double>(et + at);
  const auto ee = b.energy_in(GpuState::exec_idle).microjoules();
  const auto ae = b.energy_in(GpuState::active).microjoules();
  if (ee + ae > 0) r.energy_fraction = static_cast<double>(ee) / static_cast<double>(ee + ae);
  return r;
}

inline std::vector<JobRecord> filter_long_jobs(const std::vector<JobRecord>& jobs, std::int64_t cutoff)
{
  std::vector<JobRecord> out;
  std::copy_if(jobs.begin(), jobs.end(), std::back_inserter(out),
               [cutoff](const JobRecord& j) { return j.length() >= cutoff; });
  return out;
}

struct JobFraction {
  std::string job_id;
  FractionReport fractions;
};

inline std::vector<JobFraction> per_job_fractions(const std::map<std::string, StateBreakdown>& jobs)
{
  std::vector<JobFraction> out;
  out.reserve(jobs.size());
  for (const auto& [id, b] : jobs) out.push_back({id, in_execution_fractions(b)});
  return out;
}

enum class FractionKind { time, energy };

inline std::vector<double> fraction_values(const std::vector<JobFraction>& jobs, FractionKind kind)
{
  std::vector<double> v;
  v.reserve(jobs.size());
  for (const auto& j : jobs) v.push_back(kind == FractionKind::time ? j.fractions.time_fraction : j.fractions.energy_fraction);
  return v;
}

inline std::vector<stats::CdfPoint> fraction_cdf(const std::vector<JobFraction>& jobs, FractionKind kind)
{
  return stats::empirical_cdf(fraction_values(jobs, kind));
}

struct DurationStats {
  bool empty = true;
  std::size_t count = 0;
  std::int64_t p50 = 0;
  std::int64_t p90 = 0;
  std::int64_t p99 = 0;
  std::vector<stats::CdfPoint> cdf;
};

/// Nearest-rank quantiles of interval durations. An empty list yields the
/// explicit empty value.
inline DurationStats interval_duration_stats(const std::vector<ExecIdleInterval>& intervals)
{
  DurationStats s;
  if (intervals.empty()) return s;
  std::vector<std::int64_t> d;
  d.reserve(intervals.size());
  for (const auto& iv : intervals) d.push_back(iv.duration);
  std::sort(d.begin(), d.end());
  s.empty = false;
  s.count = d.size();
  s.p50 = stats::nearest_rank_sorted(d, 0.50);
  s.p90 = stats::nearest_rank_sorted(d, 0.90);
  s.p99 = stats::nearest_rank_sorted(d, 0.99);
  s.cdf = stats::empirical_cdf(std::move(d));
  return s;
}

class MissingTdpError : public std::runtime_error {
public:
  explicit MissingTdpError(const std::string& model)
      : std::runtime_error("no TDP known for GPU model '" + model + "'"), model_name(model)
  {
  }
  std::string model_name;
};

struct InventoryEntry {
  GpuModelSpec spec;
  std::size_t count = 0;
};

struct TdpComparison {
  double observed_joules = 0.0;
  double bound_joules = 0.0;
  double ratio = 0.0;
};

/// Observed energy against running every inventoried GPU at TDP for the whole
/// window.
inline TdpComparison tdp_comparison(const std::vector<InventoryEntry>& inventory, std::int64_t window_seconds,
                                    Energy observed)
{
  TdpComparison r;
  for (const auto& e : inventory) {
    if (!e.spec.tdp) throw MissingTdpError(e.spec.gpu_name);
    r.bound_joules += static_cast<double>(e.count) * *e.spec.tdp * static_cast<double>(window_seconds);
  }
  r.observed_joules = observed.joules();
  r.ratio = r.bound_joules > 0.0 ? r.observed_joules / r.bound_joules : 0.0;
  return r;
}

}  // namespace xidle
