#pragma once

// Three-state taxonomy: deep idle (no program resident), execution-idle
// (resident, every visible activity signal below threshold for a sustained
// run) and active execution (everything else while resident).

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "xidle/records.hpp"
#include "xidle/telemetry.hpp"
#include "xidle/units.hpp"

namespace xidle {

struct ClassifierConfig {
  double activity_threshold = 0.05;      ///< fraction of 100%
  double comm_threshold = 1000.0;        ///< MB/s (decimal GB/s)
  std::int64_t min_interval = 5;         ///< s
  std::int64_t max_sample_gap = 2;       ///< s between consecutive samples of one run
  double residency_power_margin = 10.0;  ///< W above deep-idle baseline

  void validate() const
  {
    if (!(activity_threshold > 0.0) || !(comm_threshold > 0.0) || min_interval < 1 || max_sample_gap < 1 ||
        !(residency_power_margin > 0.0)) {
      throw std::invalid_argument("classifier config: all fields must be positive and min_interval >= 1");
    }
  }
};

enum class SampleActivityClass { no_program, low_activity_resident, active };

enum class GpuState { deep_idle, exec_idle, active };

inline constexpr std::array<GpuState, 3> kStates = {GpuState::deep_idle, GpuState::exec_idle, GpuState::active};

inline std::string_view to_string(GpuState s)
{
  switch (s) {
    case GpuState::deep_idle: return "deep-idle";
    case GpuState::exec_idle: return "exec-idle";
    case GpuState::active: return "active";
  }
  return "active";
}

inline GpuState state_from_string(std::string_view s)
{
  if (s == "deep-idle") return GpuState::deep_idle;
  if (s == "exec-idle") return GpuState::exec_idle;
  if (s == "active") return GpuState::active;
  throw std::invalid_argument("unknown state '" + std::string(s) + "'");
}

/// True when every available activity signal is below the activity threshold
/// and every available communication signal is below the comm threshold.
/// Signals that are absent, or unsupported by the model, are left out.
inline bool is_low_activity(const TelemetrySample& s, const GpuModelSpec& spec, const ClassifierConfig& cfg)
{
  const double pct_limit = cfg.activity_threshold * 100.0;
  for (auto sig : kActivitySignals) {
    const auto& v = s.signal(sig);
    if (v && spec.signal_available(sig) && !(*v < pct_limit)) return false;
  }
  for (auto sig : kCommSignals) {
    const auto& v = s.signal(sig);
    if (v && spec.signal_available(sig) && !(*v < cfg.comm_threshold)) return false;
  }
  return true;
}

inline SampleActivityClass classify_sample(const TelemetrySample& s, const GpuModelSpec& spec,
                                           const ClassifierConfig& cfg, bool resident)
{
  if (!resident) return SampleActivityClass::no_program;
  return is_low_activity(s, spec, cfg) ? SampleActivityClass::low_activity_resident : SampleActivityClass::active;
}

class ResidencyError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Per-sample program residency for one job stream.
///
/// An explicit proc_resident flag is taken verbatim. Otherwise residency
/// starts at the first sample that shows activity or draws more than
/// deep_idle_power + margin, and then holds until the end of the job.
inline std::vector<bool> detect_residency(std::span<const TelemetrySample> stream, const GpuModelSpec& spec,
                                          const ClassifierConfig& cfg)
{
  std::vector<bool> out;
  out.reserve(stream.size());
  bool started = false;
  for (const auto& s : stream) {
    if (s.proc_resident) {
      out.push_back(*s.proc_resident);
      continue;
    }
    if (!spec.deep_idle_power) {
      throw ResidencyError("residency undeterminable for " + s.hostname + ":" + s.gpu_id + " (" + s.gpu_name +
                           "): no proc_resident flag and no deep-idle baseline");
    }
    if (!started) {
      started = !is_low_activity(s, spec, cfg) || s.power > *spec.deep_idle_power + cfg.residency_power_margin;
    }
    out.push_back(started);
  }
  return out;
}

struct ClassifiedSample {
  std::int64_t timestamp = 0;
  SampleActivityClass cls = SampleActivityClass::active;
  double power = 0.0;
};

inline std::vector<ClassifiedSample> classify_stream(std::span<const TelemetrySample> stream, const GpuModelSpec& spec,
                                                     const ClassifierConfig& cfg)
{
  const auto resident = detect_residency(stream, spec, cfg);
  std::vector<ClassifiedSample> out;
  out.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    out.push_back({stream[i].timestamp, classify_sample(stream[i], spec, cfg, resident[i]), stream[i].power});
  }
  return out;
}

struct TimelineEntry {
  std::int64_t timestamp = 0;
  GpuState state = GpuState::active;

  friend bool operator==(const TimelineEntry&, const TimelineEntry&) = default;
};

struct StateTimeline {
  StreamKey key;
  std::vector<TimelineEntry> entries;
};

struct ExecIdleInterval {
  StreamKey key;
  std::int64_t start = 0;     ///< timestamp of first sample
  std::int64_t end = 0;       ///< timestamp of last sample
  std::int64_t duration = 0;  ///< end - start + sample period
  Energy energy;              ///< sum over the interval's samples
  double mean_power = 0.0;    ///< energy / duration

  friend bool operator==(const ExecIdleInterval& a, const ExecIdleInterval& b)
  {
    return a.key == b.key && a.start == b.start && a.end == b.end && a.duration == b.duration &&
           a.energy == b.energy;
  }
};

struct IntervalDetection {
  StateTimeline timeline;
  std::vector<ExecIdleInterval> intervals;
};

/// Finds maximal runs of low-activity resident samples. A run breaks at any
/// other class or at a timestamp step larger than max_sample_gap; runs
/// spanning at least min_interval become execution-idle, shorter ones are
/// labelled active.
inline IntervalDetection detect_intervals(const StreamKey& key, std::span<const ClassifiedSample> stream,
                                          const ClassifierConfig& cfg)
{
  IntervalDetection out;
  out.timeline.key = key;
  out.timeline.entries.reserve(stream.size());

  const auto close_run = [&](std::size_t first, std::size_t last) {
    const auto span = stream[last].timestamp - stream[first].timestamp + kSamplePeriod;
    const bool sustained = span >= cfg.min_interval;
    for (std::size_t i = first; i <= last; ++i) {
      out.timeline.entries.push_back({stream[i].timestamp, sustained ? GpuState::exec_idle : GpuState::active});
    }
    if (!sustained) return;
    ExecIdleInterval iv;
    iv.key = key;
    iv.start = stream[first].timestamp;
    iv.end = stream[last].timestamp;
    iv.duration = span;
    for (std::size_t i = first; i <= last; ++i) iv.energy += Energy::from_watt_seconds(stream[i].power);
    iv.mean_power = iv.energy.joules() / static_cast<double>(span);
    out.intervals.push_back(std::move(iv));
  };

  std::size_t run_start = 0;
  bool in_run = false;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (i > 0 && stream[i].timestamp <= stream[i - 1].timestamp) {
      throw std::invalid_argument("detect_intervals: timestamps must strictly increase");
    }
    const auto& s = stream[i];
    if (s.cls == SampleActivityClass::low_activity_resident) {
      if (in_run && s.timestamp - stream[i - 1].timestamp > cfg.max_sample_gap) {
        close_run(run_start, i - 1);
        in_run = false;
      }
      if (!in_run) {
        run_start = i;
        in_run = true;
      }
      continue;
    }
    if (in_run) {
      close_run(run_start, i - 1);
      in_run = false;
    }
    out.timeline.entries.push_back(
        {s.timestamp, s.cls == SampleActivityClass::no_program ? GpuState::deep_idle : GpuState::active});
  }
  if (in_run) close_run(run_start, stream.size() - 1);
  return out;
}

// ---------------------------------------------------------------------------
// Line-record export

inline void write_timelines(std::ostream& out, const std::vector<StateTimeline>& timelines)
{
  out << "job_id,hostname,gpu_id,timestamp,state\n";
  for (const auto& tl : timelines) {
    const auto prefix = records::checked_field(tl.key.job_id) + "," + records::checked_field(tl.key.hostname) + "," +
                        records::checked_field(tl.key.gpu_id) + ",";
    for (const auto& e : tl.entries) out << prefix << e.timestamp << ',' << to_string(e.state) << '\n';
  }
}

inline std::vector<StateTimeline> parse_timelines(std::istream& in)
{
  std::vector<StateTimeline> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  const records::Header h(line);
  const auto cj = h.require("job_id"), ch = h.require("hostname"), cg = h.require("gpu_id"),
             ct = h.require("timestamp"), cs = h.require("state");
  std::map<StreamKey, std::size_t> index;
  while (std::getline(in, line)) {
    if (records::trim(line).empty()) continue;
    const auto f = records::split(line);
    if (f.size() != h.size()) throw std::invalid_argument("malformed timeline line");
    StreamKey key{std::string(f[cj]), std::string(f[ch]), std::string(f[cg])};
    auto [it, inserted] = index.try_emplace(key, out.size());
    if (inserted) out.push_back({key, {}});
    out[it->second].entries.push_back({*records::parse_int(f[ct]), state_from_string(f[cs])});
  }
  return out;
}

inline void write_intervals(std::ostream& out, const std::vector<ExecIdleInterval>& intervals)
{
  out << "job_id,hostname,gpu_id,start,end,duration_s,energy_j,mean_power_w\n";
  for (const auto& iv : intervals) {
    out << records::checked_field(iv.key.job_id) << ',' << records::checked_field(iv.key.hostname) << ','
        << records::checked_field(iv.key.gpu_id) << ',' << iv.start << ',' << iv.end << ',' << iv.duration << ','
        << records::format_fixed(iv.energy.joules(), 6) << ',' << records::format_fixed(iv.mean_power, 6) << '\n';
  }
}

inline std::vector<ExecIdleInterval> parse_intervals(std::istream& in)
{
  std::vector<ExecIdleInterval> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  const records::Header h(line);
  const auto cj = h.require("job_id"), ch = h.require("hostname"), cg = h.require("gpu_id"), cs = h.require("start"),
             ce = h.require("end"), cd = h.require("duration_s"), cen = h.require("energy_j"),
             cp = h.require("mean_power_w");
  while (std::getline(in, line)) {
    if (records::trim(line).empty()) continue;
    const auto f = records::split(line);
    if (f.size() != h.size()) throw std::invalid_argument("malformed interval line");
    ExecIdleInterval iv;
    iv.key = {std::string(f[cj]), std::string(f[ch]), std::string(f[cg])};
    iv.start = *records::parse_int(f[cs]);
    iv.end = *records::parse_int(f[ce]);
    iv.duration = *records::parse_int(f[cd]);
    iv.energy = Energy::from_watt_seconds(*records::parse_double(f[cen]));
    iv.mean_power = *records::parse_double(f[cp]);
    out.push_back(std::move(iv));
  }
  return out;
}

}  // namespace xidle
