#pragma once

// Telemetry data model, ingestion and job attribution.
//
// One TelemetrySample is one second of one GPU: board power, activity and
// communication counters, host activity and the job the GPU belonged to.
// Any counter may be absent; absence is carried as an empty optional and is
// never conflated with a zero reading.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xidle/records.hpp"

namespace xidle {

enum class Signal : std::size_t {
  sm,
  tensor,
  dram,
  fp16,
  fp32,
  fp64,
  sm_clk,
  mem_clk,
  pcie_tx,
  pcie_rx,
  nvlink_tx,
  nvlink_rx,
  cpu_util,
  host_mem_util,
  nic_tx,
  nic_rx,
};

inline constexpr std::size_t kSignalCount = 16;

inline constexpr std::array<std::string_view, kSignalCount> kSignalNames = {
    "sm",       "tensor",   "dram",      "fp16",      "fp32",     "fp64",
    "sm_clk",   "mem_clk",  "pcie_tx",   "pcie_rx",   "nvlink_tx", "nvlink_rx",
    "cpu_util", "host_mem_util", "nic_tx", "nic_rx"};

/// Compute and memory activity, in percent.
inline constexpr std::array<Signal, 6> kActivitySignals = {
    Signal::sm, Signal::tensor, Signal::dram, Signal::fp16, Signal::fp32, Signal::fp64};

/// Device-side communication, in MB/s.
inline constexpr std::array<Signal, 4> kCommSignals = {
    Signal::pcie_tx, Signal::pcie_rx, Signal::nvlink_tx, Signal::nvlink_rx};

inline constexpr std::string_view signal_name(Signal s) { return kSignalNames[static_cast<std::size_t>(s)]; }

inline std::optional<Signal> signal_from_name(std::string_view name)
{
  for (std::size_t i = 0; i < kSignalCount; ++i) {
    if (kSignalNames[i] == name) return static_cast<Signal>(i);
  }
  return std::nullopt;
}

inline constexpr bool is_percent_signal(Signal s)
{
  switch (s) {
    case Signal::sm:
    case Signal::tensor:
    case Signal::dram:
    case Signal::fp16:
    case Signal::fp32:
    case Signal::fp64:
    case Signal::cpu_util:
    case Signal::host_mem_util:
      return true;
    default:
      return false;
  }
}

struct TelemetrySample {
  std::int64_t timestamp = 0;  ///< epoch seconds
  std::string hostname;
  std::string gpu_id;
  std::string gpu_name;
  double power = 0.0;  ///< W
  std::array<std::optional<double>, kSignalCount> signals{};
  std::optional<std::string> job_id;
  std::optional<std::string> job_name;
  std::optional<bool> proc_resident;

  const std::optional<double>& signal(Signal s) const { return signals[static_cast<std::size_t>(s)]; }
  std::optional<double>& signal(Signal s) { return signals[static_cast<std::size_t>(s)]; }

  friend bool operator==(const TelemetrySample&, const TelemetrySample&) = default;
};

/// Returns an empty string when the sample satisfies every field invariant,
/// otherwise a description of the first violation.
inline std::string validate(const TelemetrySample& s)
{
  if (s.hostname.empty()) return "empty hostname";
  if (s.gpu_id.empty()) return "empty gpu_id";
  if (s.gpu_name.empty()) return "empty gpu_name";
  if (!(s.power >= 0.0)) return "negative power";
  for (std::size_t i = 0; i < kSignalCount; ++i) {
    const auto& v = s.signals[i];
    if (!v) continue;
    const auto sig = static_cast<Signal>(i);
    if (*v < 0.0) return std::string(signal_name(sig)) + " negative";
    if (is_percent_signal(sig) && *v > 100.0) return std::string(signal_name(sig)) + " above 100%";
  }
  return {};
}

struct GpuRef {
  std::string hostname;
  std::string gpu_id;

  friend auto operator<=>(const GpuRef&, const GpuRef&) = default;
};

enum class JobCategory { serving, batch_inference, training, other, unknown };

inline std::string_view to_string(JobCategory c)
{
  switch (c) {
    case JobCategory::serving: return "serving";
    case JobCategory::batch_inference: return "batch-inference";
    case JobCategory::training: return "training";
    case JobCategory::other: return "other";
    case JobCategory::unknown: return "unknown";
  }
  return "unknown";
}

inline JobCategory category_from_string(std::string_view s)
{
  if (s == "serving") return JobCategory::serving;
  if (s == "batch-inference") return JobCategory::batch_inference;
  if (s == "training") return JobCategory::training;
  if (s == "other") return JobCategory::other;
  if (s == "unknown" || s.empty()) return JobCategory::unknown;
  throw std::invalid_argument("unknown job category '" + std::string(s) + "'");
}

struct JobRecord {
  std::string job_id;
  std::string job_name;
  JobCategory category = JobCategory::unknown;
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::vector<GpuRef> gpu_assignments;

  std::int64_t length() const { return end - start; }

  friend bool operator==(const JobRecord&, const JobRecord&) = default;
};

/// Per-model constants. A default-constructed spec (besides the name) is the
/// "empty" spec given to models missing from the catalog.
struct GpuModelSpec {
  std::string gpu_name;
  std::optional<double> tdp;              ///< W
  std::optional<double> deep_idle_power;  ///< W
  std::set<Signal> available_signals;     ///< empty: rely on per-sample presence

  bool known() const { return tdp.has_value() || deep_idle_power.has_value() || !available_signals.empty(); }

  bool signal_available(Signal s) const { return available_signals.empty() || available_signals.count(s) > 0; }
};

class IngestError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class AttributionError : public std::runtime_error {
public:
  AttributionError(std::string first, std::string second)
      : std::runtime_error("overlapping job allocations: " + first + " and " + second),
        first_job(std::move(first)),
        second_job(std::move(second))
  {
  }
  std::string first_job;
  std::string second_job;
};

// ---------------------------------------------------------------------------
// Telemetry file format

inline constexpr std::array<std::string_view, 24> kTelemetryColumns = {
    "timestamp", "hostname",  "gpu_id",    "gpu_name", "power",         "sm",
    "tensor",    "dram",      "fp16",      "fp32",     "fp64",          "sm_clk",
    "mem_clk",   "pcie_tx",   "pcie_rx",   "nvlink_tx", "nvlink_rx",    "cpu_util",
    "host_mem_util", "nic_tx", "nic_rx",   "job_id",   "job_name",      "proc_resident"};

struct TelemetryParseResult {
  std::vector<TelemetrySample> samples;  ///< sorted by (hostname, gpu_id, timestamp)
  std::size_t malformed = 0;
  std::size_t duplicates = 0;
  std::size_t unknown_gpu_samples = 0;
  std::set<std::string> unknown_models;
};

namespace detail {

inline std::optional<std::string> optional_text(std::string_view s)
{
  if (s.empty()) return std::nullopt;
  return std::string(s);
}

struct SampleKeyHash {
  std::size_t operator()(const std::tuple<std::string, std::string, std::int64_t>& k) const
  {
    const std::hash<std::string> hs;
    std::size_t h = hs(std::get<0>(k));
    h = h * 1000003u ^ hs(std::get<1>(k));
    h = h * 1000003u ^ std::hash<std::int64_t>{}(std::get<2>(k));
    return h;
  }
};

}  // namespace detail

template <typename Catalog>
TelemetryParseResult parse_telemetry(std::istream& in, const Catalog& catalog)
{
  if (!in) throw IngestError("telemetry source is not readable");
  TelemetryParseResult result;

  std::string line;
  if (!std::getline(in, line)) {
    if (in.bad()) throw IngestError("telemetry source is not readable");
    return result;  // empty source is a valid empty dataset
  }
  records::Header header;
  try {
    header = records::Header(line);
  } catch (const std::invalid_argument& e) {
    throw IngestError(std::string("bad telemetry header: ") + e.what());
  }
  if (header.size() != kTelemetryColumns.size()) {
    throw IngestError("telemetry header must name exactly the telemetry fields");
  }
  std::array<std::size_t, kTelemetryColumns.size()> col{};
  for (std::size_t i = 0; i < kTelemetryColumns.size(); ++i) {
    const auto c = header.find(kTelemetryColumns[i]);
    if (!c) throw IngestError("telemetry header lacks column '" + std::string(kTelemetryColumns[i]) + "'");
    col[i] = *c;
  }

  std::unordered_set<std::tuple<std::string, std::string, std::int64_t>, detail::SampleKeyHash> seen;
  while (std::getline(in, line)) {
    if (records::trim(line).empty()) continue;
    const auto f = records::split(line);
    if (f.size() != header.size()) {
      ++result.malformed;
      continue;
    }
    TelemetrySample s;
    try {
      const auto ts = records::parse_int(f[col[0]]);
      const auto power = records::parse_double(f[col[4]]);
      if (!ts || !power) throw std::invalid_argument("missing required field");
      s.timestamp = *ts;
      s.hostname = std::string(f[col[1]]);
      s.gpu_id = std::string(f[col[2]]);
      s.gpu_name = std::string(f[col[3]]);
      s.power = *power;
      for (std::size_t k = 0; k < kSignalCount; ++k) s.signals[k] = records::parse_double(f[col[5 + k]]);
      s.job_id = detail::optional_text(f[col[21]]);
      s.job_name = detail::optional_text(f[col[22]]);
      s.proc_resident = records::parse_bool(f[col[23]]);
    } catch (const std::invalid_argument&) {
      ++result.malformed;
      continue;
    }
    if (!validate(s).empty()) {
      ++result.malformed;
      continue;
    }
    if (!seen.emplace(s.hostname, s.gpu_id, s.timestamp).second) {
      ++result.duplicates;
      continue;
    }
    if (!catalog.contains(s.gpu_name)) {
      ++result.unknown_gpu_samples;
      result.unknown_models.insert(s.gpu_name);
    }
    result.samples.push_back(std::move(s));
  }
  if (in.bad()) throw IngestError("read error on telemetry source");

  std::stable_sort(result.samples.begin(), result.samples.end(), [](const auto& a, const auto& b) {
    return std::tie(a.hostname, a.gpu_id, a.timestamp) < std::tie(b.hostname, b.gpu_id, b.timestamp);
  });
  return result;
}

template <typename Catalog>
TelemetryParseResult parse_telemetry_file(const std::string& path, const Catalog& catalog)
{
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open telemetry file '" + path + "'");
  return parse_telemetry(in, catalog);
}

inline void write_telemetry_header(std::ostream& out)
{
  out << records::join(kTelemetryColumns) << '\n';
}

inline void write_telemetry_row(std::ostream& out, const TelemetrySample& s)
{
  out << s.timestamp << ',' << records::checked_field(s.hostname) << ',' << records::checked_field(s.gpu_id)
      << ',' << records::checked_field(s.gpu_name) << ',' << records::format_double(s.power);
  for (const auto& v : s.signals) out << ',' << records::format_optional(v);
  out << ',' << (s.job_id ? records::checked_field(*s.job_id) : std::string{});
  out << ',' << (s.job_name ? records::checked_field(*s.job_name) : std::string{});
  out << ',' << (s.proc_resident ? (*s.proc_resident ? "1" : "0") : "") << '\n';
}

inline void write_telemetry(std::ostream& out, const std::vector<TelemetrySample>& samples)
{
  write_telemetry_header(out);
  for (const auto& s : samples) write_telemetry_row(out, s);
}

// ---------------------------------------------------------------------------
// Job file format: job_id,job_name,category,start,end,gpus  (gpus = host:gpu;host:gpu)

struct JobParseResult {
  std::vector<JobRecord> jobs;
  std::size_t malformed = 0;
};

inline JobParseResult parse_jobs(std::istream& in)
{
  if (!in) throw IngestError("job source is not readable");
  JobParseResult result;
  std::string line;
  if (!std::getline(in, line)) return result;
  records::Header header;
  std::array<std::size_t, 6> col{};
  try {
    header = records::Header(line);
    const std::array<std::string_view, 6> names = {"job_id", "job_name", "category", "start", "end", "gpus"};
    for (std::size_t i = 0; i < names.size(); ++i) col[i] = header.require(names[i]);
  } catch (const std::invalid_argument& e) {
    throw IngestError(std::string("bad job header: ") + e.what());
  }
  while (std::getline(in, line)) {
    if (records::trim(line).empty()) continue;
    const auto f = records::split(line);
    if (f.size() != header.size()) {
      ++result.malformed;
      continue;
    }
    try {
      JobRecord j;
      j.job_id = std::string(f[col[0]]);
      j.job_name = std::string(f[col[1]]);
      j.category = category_from_string(f[col[2]]);
      const auto start = records::parse_int(f[col[3]]);
      const auto end = records::parse_int(f[col[4]]);
      if (j.job_id.empty() || !start || !end || *end < *start) throw std::invalid_argument("bad job span");
      j.start = *start;
      j.end = *end;
      for (const auto& g : records::split(f[col[5]], ';')) {
        const auto colon = g.find(':');
        if (colon == std::string_view::npos || colon == 0 || colon + 1 == g.size()) {
          throw std::invalid_argument("bad gpu assignment");
        }
        j.gpu_assignments.push_back({std::string(g.substr(0, colon)), std::string(g.substr(colon + 1))});
      }
      if (j.gpu_assignments.empty()) throw std::invalid_argument("no gpus");
      result.jobs.push_back(std::move(j));
    } catch (const std::invalid_argument&) {
      ++result.malformed;
    }
  }
  return result;
}

inline JobParseResult parse_jobs_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open job file '" + path + "'");
  return parse_jobs(in);
}

inline void write_jobs(std::ostream& out, const std::vector<JobRecord>& jobs)
{
  out << "job_id,job_name,category,start,end,gpus\n";
  for (const auto& j : jobs) {
    std::vector<std::string> gpus;
    for (const auto& g : j.gpu_assignments) {
      gpus.push_back(records::checked_field(g.hostname) + ":" + records::checked_field(g.gpu_id));
    }
    out << records::checked_field(j.job_id) << ',' << records::checked_field(j.job_name) << ','
        << to_string(j.category) << ',' << j.start << ',' << j.end << ',' << records::join(gpus, ';') << '\n';
  }
}

/// Reconstructs job records from the job_id carried on samples, for datasets
/// that come without a scheduler log.
inline std::vector<JobRecord> derive_jobs_from_samples(const std::vector<TelemetrySample>& samples)
{
  std::map<std::string, JobRecord> jobs;
  std::map<std::string, std::set<GpuRef>> gpus;
  for (const auto& s : samples) {
    if (!s.job_id) continue;
    auto [it, inserted] = jobs.try_emplace(*s.job_id);
    auto& j = it->second;
    if (inserted) {
      j.job_id = *s.job_id;
      j.job_name = s.job_name.value_or("");
      j.start = j.end = s.timestamp;
    }
    j.start = std::min(j.start, s.timestamp);
    j.end = std::max(j.end, s.timestamp);
    gpus[*s.job_id].insert({s.hostname, s.gpu_id});
  }
  std::vector<JobRecord> out;
  for (auto& [id, j] : jobs) {
    j.gpu_assignments.assign(gpus[id].begin(), gpus[id].end());
    out.push_back(std::move(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attribution

struct StreamKey {
  std::string job_id;
  std::string hostname;
  std::string gpu_id;

  friend auto operator<=>(const StreamKey&, const StreamKey&) = default;
};

struct Attribution {
  std::map<StreamKey, std::vector<TelemetrySample>> streams;
  std::vector<TelemetrySample> unallocated;

  std::size_t assigned_count() const
  {
    std::size_t n = 0;
    for (const auto& [k, v] : streams) n += v.size();
    return n;
  }
};

/// Assigns each sample to the job whose [start, end] window covers it on that
/// GPU. Jobs must hold disjoint windows per GPU.
inline Attribution attribute_samples(const std::vector<TelemetrySample>& samples, const std::vector<JobRecord>& jobs)
{
  struct Window {
    std::int64_t start;
    std::int64_t end;
    const JobRecord* job;
  };
  std::map<GpuRef, std::vector<Window>> windows;
  for (const auto& j : jobs) {
    for (const auto& g : j.gpu_assignments) windows[g].push_back({j.start, j.end, &j});
  }
  for (auto& [gpu, ws] : windows) {
    std::sort(ws.begin(), ws.end(), [](const Window& a, const Window& b) {
      return std::tie(a.start, a.end, a.job->job_id) < std::tie(b.start, b.end, b.job->job_id);
    });
    for (std::size_t i = 1; i < ws.size(); ++i) {
      if (ws[i].start <= ws[i - 1].end) throw AttributionError(ws[i - 1].job->job_id, ws[i].job->job_id);
    }
  }

  Attribution out;
  for (const auto& s : samples) {
    const auto it = windows.find(GpuRef{s.hostname, s.gpu_id});
    const JobRecord* owner = nullptr;
    if (it != windows.end()) {
      const auto& ws = it->second;
      auto w = std::upper_bound(ws.begin(), ws.end(), s.timestamp,
                                [](std::int64_t t, const Window& x) { return t < x.start; });
      if (w != ws.begin()) {
        --w;
        if (s.timestamp <= w->end) owner = w->job;
      }
    }
    if (owner) {
      out.streams[StreamKey{owner->job_id, s.hostname, s.gpu_id}].push_back(s);
    } else {
      out.unallocated.push_back(s);
    }
  }
  const auto by_time = [](const TelemetrySample& a, const TelemetrySample& b) { return a.timestamp < b.timestamp; };
  for (auto& [key, stream] : out.streams) {
    std::stable_sort(stream.begin(), stream.end(), by_time);
    for (std::size_t i = 1; i < stream.size(); ++i) {
      if (stream[i].timestamp == stream[i - 1].timestamp) {
        throw std::invalid_argument("duplicate sample timestamp in stream of job " + key.job_id);
      }
    }
  }
  std::stable_sort(out.unallocated.begin(), out.unallocated.end(), [](const auto& a, const auto& b) {
    return std::tie(a.hostname, a.gpu_id, a.timestamp) < std::tie(b.hostname, b.gpu_id, b.timestamp);
  });
  return out;
}

}  // namespace xidle
