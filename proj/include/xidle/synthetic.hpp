#pragma once

// Synthetic telemetry and trace fixtures with ground truth.
//
// A scenario places jobs on GPUs; each job is a sequence of phases (deep-idle
// setup, active bursts, low-activity gaps) with target power and signal
// levels. The generator emits per-second samples plus the ground-truth state
// of every sample, derived from the phase plan alone.
//
// Besides explicit phase lists, three parametric kinds expand into phase
// plans ("cluster-mix", "preidle-corpus") or request traces ("poisson-trace",
// "bursty-trace").

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xidle/catalog.hpp"
#include "xidle/classifier.hpp"
#include "xidle/random.hpp"
#include "xidle/records.hpp"
#include "xidle/replay.hpp"
#include "xidle/stats.hpp"
#include "xidle/telemetry.hpp"
#include "xidle/units.hpp"

namespace xidle {

class ScenarioError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class PhaseClass { deep, active, low };

inline PhaseClass phase_class_from_string(const std::string& s)
{
  if (s == "deep") return PhaseClass::deep;
  if (s == "active") return PhaseClass::active;
  if (s == "low") return PhaseClass::low;
  throw ScenarioError("unknown phase class '" + s + "'");
}

/// Pre-idle fingerprint categories, in labelling order.
enum class FingerprintLabel { pcie_heavy, nic_heavy, nvlink_heavy, compute_to_idle, other };

inline constexpr std::array<FingerprintLabel, 5> kFingerprintLabels = {
    FingerprintLabel::pcie_heavy, FingerprintLabel::nic_heavy, FingerprintLabel::nvlink_heavy,
    FingerprintLabel::compute_to_idle, FingerprintLabel::other};

inline std::string_view to_string(FingerprintLabel l)
{
  switch (l) {
    case FingerprintLabel::pcie_heavy: return "pcie-heavy";
    case FingerprintLabel::nic_heavy: return "nic-heavy";
    case FingerprintLabel::nvlink_heavy: return "nvlink-heavy";
    case FingerprintLabel::compute_to_idle: return "compute-to-idle";
    case FingerprintLabel::other: return "other";
  }
  return "other";
}

inline FingerprintLabel fingerprint_label_from_string(std::string_view s)
{
  for (auto l : kFingerprintLabels) {
    if (to_string(l) == s) return l;
  }
  throw std::invalid_argument("unknown fingerprint label '" + std::string(s) + "'");
}

/// Signal levels of an active segment that carries a fingerprint.
inline std::map<Signal, double> fingerprint_levels(FingerprintLabel l)
{
  using S = Signal;
  switch (l) {
    case FingerprintLabel::pcie_heavy:
      return {{S::sm, 8}, {S::tensor, 2}, {S::dram, 3}, {S::pcie_tx, 6000}, {S::pcie_rx, 2500},
              {S::nvlink_tx, 0}, {S::nvlink_rx, 0}, {S::nic_tx, 5}, {S::nic_rx, 5}, {S::cpu_util, 75}};
    case FingerprintLabel::nic_heavy:
      return {{S::sm, 8}, {S::tensor, 2}, {S::dram, 3}, {S::pcie_tx, 300}, {S::pcie_rx, 200},
              {S::nvlink_tx, 0}, {S::nvlink_rx, 0}, {S::nic_tx, 2500}, {S::nic_rx, 1500}, {S::cpu_util, 80}};
    case FingerprintLabel::nvlink_heavy:
      return {{S::sm, 25}, {S::tensor, 10}, {S::dram, 10}, {S::pcie_tx, 200}, {S::pcie_rx, 150},
              {S::nvlink_tx, 25000}, {S::nvlink_rx, 25000}, {S::nic_tx, 5}, {S::nic_rx, 5}, {S::cpu_util, 15}};
    case FingerprintLabel::compute_to_idle:
      return {{S::sm, 75}, {S::tensor, 40}, {S::dram, 45}, {S::pcie_tx, 200}, {S::pcie_rx, 150},
              {S::nvlink_tx, 0}, {S::nvlink_rx, 0}, {S::nic_tx, 5}, {S::nic_rx, 5}, {S::cpu_util, 15}};
    case FingerprintLabel::other:
      return {};
  }
  return {};
}

struct PhaseSpec {
  PhaseClass cls = PhaseClass::active;
  std::int64_t duration = 1;
  double power = 0.0;
  std::map<Signal, double> levels;
  std::optional<FingerprintLabel> fingerprint;
};

struct JobSpec {
  std::string job_id;
  std::string job_name;
  JobCategory category = JobCategory::unknown;
  std::size_t gpu = 0;
  std::optional<std::int64_t> start_offset;  ///< s after scenario start; default: after previous job
  std::vector<PhaseSpec> phases;
};

struct GpuSlot {
  std::string hostname;
  std::string gpu_id;
  std::string gpu_name;
};

struct Scenario {
  std::string name = "scenario";
  std::string kind = "explicit";
  std::int64_t start_time = 1770163200;  ///< 2026-02-04T00:00:00Z
  std::int64_t min_interval = 5;
  std::vector<GpuSlot> gpus;
  std::vector<JobSpec> jobs;
  double power_jitter = 2.0;   ///< W, uniform +/-
  double signal_jitter = 0.1;  ///< relative, uniform +/-
  bool emit_proc_resident = false;
  std::int64_t job_gap = 0;         ///< unallocated seconds between consecutive jobs on a GPU
  std::int64_t lead_unallocated = 0;
  nlohmann::json params = nlohmann::json::object();  ///< parametric kinds
  std::optional<nlohmann::json> catalog;
};

struct GroundTruthReport {
  std::int64_t deep_seconds = 0;
  std::int64_t exec_idle_seconds = 0;
  std::int64_t active_seconds = 0;
  std::int64_t unallocated_seconds = 0;
  Energy exec_idle_energy;
  Energy active_energy;
  double time_fraction = 0.0;    ///< in-execution
  double energy_fraction = 0.0;  ///< in-execution
};

struct FingerprintTruth {
  StreamKey key;
  std::int64_t interval_start = 0;
  FingerprintLabel label = FingerprintLabel::other;
};

struct GeneratedTelemetry {
  std::vector<TelemetrySample> samples;  ///< GPU-major, timestamp order
  std::vector<std::string> labels;       ///< ground-truth state per sample, or "unallocated"
  std::vector<std::string> phases;       ///< phase class per sample: deep, active, low or unallocated
  std::vector<JobRecord> jobs;
  GpuCatalog catalog;
  std::vector<FingerprintTruth> fingerprints;
  GroundTruthReport report;
};

// ---------------------------------------------------------------------------
// Scenario parsing

namespace detail {

inline std::map<Signal, double> parse_levels(const nlohmann::json& j)
{
  std::map<Signal, double> out;
  for (const auto& [name, value] : j.items()) {
    const auto sig = signal_from_name(name);
    if (!sig) throw ScenarioError("unknown signal '" + name + "'");
    out[*sig] = value.get<double>();
  }
  return out;
}

}  // namespace detail

inline Scenario parse_scenario(const nlohmann::json& j)
{
  Scenario s;
  try {
    s.name = j.value("name", s.name);
    s.kind = j.value("kind", s.kind);
    s.start_time = j.value("start_time", s.start_time);
    s.min_interval = j.value("min_interval", s.min_interval);
    s.power_jitter = j.value("power_jitter", s.power_jitter);
    s.signal_jitter = j.value("signal_jitter", s.signal_jitter);
    s.emit_proc_resident = j.value("emit_proc_resident", s.emit_proc_resident);
    s.job_gap = j.value("job_gap", s.job_gap);
    s.lead_unallocated = j.value("lead_unallocated", s.lead_unallocated);
    if (j.contains("params")) s.params = j.at("params");
    if (j.contains("catalog")) s.catalog = j.at("catalog");
    for (const auto& g : j.value("gpus", nlohmann::json::array())) {
      s.gpus.push_back({g.at("hostname").get<std::string>(), g.at("gpu_id").get<std::string>(),
                        g.at("gpu_name").get<std::string>()});
    }
    for (const auto& jj : j.value("jobs", nlohmann::json::array())) {
      JobSpec job;
      job.job_id = jj.at("job_id").get<std::string>();
      job.job_name = jj.value("job_name", job.job_id);
      job.category = category_from_string(jj.value("category", std::string("unknown")));
      job.gpu = jj.value("gpu", std::size_t{0});
      if (jj.contains("start_offset")) job.start_offset = jj.at("start_offset").get<std::int64_t>();
      for (const auto& p : jj.at("phases")) {
        PhaseSpec ph;
        ph.cls = phase_class_from_string(p.at("class").get<std::string>());
        ph.duration = p.at("duration").get<std::int64_t>();
        ph.power = p.at("power").get<double>();
        if (p.contains("signals")) ph.levels = detail::parse_levels(p.at("signals"));
        if (p.contains("fingerprint")) {
          ph.fingerprint = fingerprint_label_from_string(p.at("fingerprint").get<std::string>());
          if (!p.contains("signals")) ph.levels = fingerprint_levels(*ph.fingerprint);
        }
        job.phases.push_back(std::move(ph));
      }
      s.jobs.push_back(std::move(job));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(std::string("bad scenario: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(std::string("bad scenario: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Sample synthesis

namespace detail {

inline constexpr double kLowActivityCeiling = 4.0;  ///< % kept under the 5% threshold
inline constexpr double kLowCommCeiling = 900.0;    ///< MB/s kept under 1 GB/s
inline constexpr double kResidencyMargin = 10.0;    ///< default classifier margin

inline std::map<Signal, double> default_levels(PhaseClass cls)
{
  using S = Signal;
  switch (cls) {
    case PhaseClass::deep:
      return {{S::sm, 0},        {S::tensor, 0},      {S::dram, 0},      {S::fp16, 0},       {S::fp32, 0},
              {S::fp64, 0},      {S::sm_clk, 210},    {S::mem_clk, 405}, {S::pcie_tx, 20},   {S::pcie_rx, 20},
              {S::nvlink_tx, 0}, {S::nvlink_rx, 0},   {S::cpu_util, 50}, {S::host_mem_util, 20}, {S::nic_tx, 20},
              {S::nic_rx, 20}};
    case PhaseClass::low:
      return {{S::sm, 0.5},      {S::tensor, 0},      {S::dram, 0.5},     {S::fp16, 0},       {S::fp32, 0.2},
              {S::fp64, 0},      {S::sm_clk, 2520},   {S::mem_clk, 9001}, {S::pcie_tx, 30},   {S::pcie_rx, 30},
              {S::nvlink_tx, 0}, {S::nvlink_rx, 0},   {S::cpu_util, 10},  {S::host_mem_util, 25}, {S::nic_tx, 2},
              {S::nic_rx, 2}};
    case PhaseClass::active:
      return {{S::sm, 60},       {S::tensor, 30},     {S::dram, 35},      {S::fp16, 20},      {S::fp32, 10},
              {S::fp64, 0},      {S::sm_clk, 2520},   {S::mem_clk, 9001}, {S::pcie_tx, 500},  {S::pcie_rx, 400},
              {S::nvlink_tx, 0}, {S::nvlink_rx, 0},   {S::cpu_util, 30},  {S::host_mem_util, 30}, {S::nic_tx, 10},
              {S::nic_rx, 10}};
  }
  return {};
}

inline bool is_activity(Signal s)
{
  return std::find(kActivitySignals.begin(), kActivitySignals.end(), s) != kActivitySignals.end();
}

inline bool is_comm(Signal s) { return std::find(kCommSignals.begin(), kCommSignals.end(), s) != kCommSignals.end(); }

inline TelemetrySample synthesize(std::int64_t ts, const GpuSlot& slot, const GpuModelSpec& spec,
                                  const PhaseSpec& phase, const JobSpec* job, bool emit_resident, double power_jitter,
                                  double signal_jitter, Rng& rng)
{
  TelemetrySample s;
  s.timestamp = ts;
  s.hostname = slot.hostname;
  s.gpu_id = slot.gpu_id;
  s.gpu_name = slot.gpu_name;
  if (job) {
    s.job_id = job->job_id;
    s.job_name = job->job_name;
    if (emit_resident) s.proc_resident = phase.cls != PhaseClass::deep;
  }

  auto levels = default_levels(phase.cls);
  for (const auto& [sig, v] : phase.levels) levels[sig] = v;
  for (const auto& [sig, level] : levels) {
    double v = level * (1.0 + rng.uniform(-signal_jitter, signal_jitter));
    v = std::max(0.0, v);
    if (is_percent_signal(sig)) v = std::min(v, 100.0);
    if (phase.cls != PhaseClass::active) {
      if (is_activity(sig)) v = std::min(v, kLowActivityCeiling);
      if (is_comm(sig)) v = std::min(v, kLowCommCeiling);
    }
    if (spec.signal_available(sig)) s.signal(sig) = v;
  }
  if (phase.cls == PhaseClass::active) {
    ClassifierConfig defaults;
    if (is_low_activity(s, spec, defaults)) s.signal(Signal::sm) = std::max(s.signal(Signal::sm).value_or(0.0), 6.0);
  }

  double p = phase.power + rng.uniform(-power_jitter, power_jitter);
  const double baseline = spec.deep_idle_power.value_or(0.0);
  if (phase.cls == PhaseClass::deep) {
    p = std::min(p, baseline + kResidencyMargin / 2.0);
  } else if (spec.deep_idle_power) {
    p = std::max(p, baseline + kResidencyMargin + 1.0);
  }
  s.power = std::max(0.0, p);
  return s;
}

/// Ground-truth state of each phase second: low runs shorter than
/// min_interval count as active.
inline std::vector<std::string> phase_labels(const JobSpec& job, std::int64_t min_interval)
{
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < job.phases.size()) {
    const auto& ph = job.phases[i];
    if (ph.cls != PhaseClass::low) {
      const auto label = ph.cls == PhaseClass::deep ? "deep-idle" : "active";
      out.insert(out.end(), static_cast<std::size_t>(ph.duration), label);
      ++i;
      continue;
    }
    std::int64_t run = 0;
    std::size_t k = i;
    while (k < job.phases.size() && job.phases[k].cls == PhaseClass::low) run += job.phases[k++].duration;
    out.insert(out.end(), static_cast<std::size_t>(run), run >= min_interval ? "exec-idle" : "active");
    i = k;
  }
  return out;
}

}  // namespace detail

inline void validate_scenario(const Scenario& sc)
{
  if (sc.min_interval < 1) throw ScenarioError("min_interval must be >= 1");
  if (sc.job_gap < 0 || sc.lead_unallocated < 0) throw ScenarioError("negative gap");
  for (const auto& job : sc.jobs) {
    if (job.gpu >= sc.gpus.size()) throw ScenarioError("job " + job.job_id + " references unknown gpu");
    if (job.phases.empty()) throw ScenarioError("job " + job.job_id + " has no phases");
    bool resident = false;
    for (const auto& ph : job.phases) {
      if (ph.duration < 1) throw ScenarioError("job " + job.job_id + ": phase duration must be >= 1");
      if (!(ph.power >= 0.0)) throw ScenarioError("job " + job.job_id + ": negative phase power");
      if (ph.cls == PhaseClass::deep && resident && !sc.emit_proc_resident) {
        throw ScenarioError("job " + job.job_id +
                            ": deep phase after residency began needs emit_proc_resident to be observable");
      }
      if (ph.cls != PhaseClass::deep) resident = true;
    }
  }
}

/// Expands an explicit scenario into samples and ground truth.
inline GeneratedTelemetry generate_explicit(const Scenario& sc, std::uint64_t seed)
{
  validate_scenario(sc);
  GeneratedTelemetry out;
  out.catalog = default_catalog();
  if (sc.catalog) merge_catalog_json(out.catalog, *sc.catalog);

  Rng rng(seed);
  std::vector<std::vector<const JobSpec*>> per_gpu(sc.gpus.size());
  for (const auto& job : sc.jobs) per_gpu[job.gpu].push_back(&job);

  for (std::size_t g = 0; g < sc.gpus.size(); ++g) {
    const auto& slot = sc.gpus[g];
    const auto spec = out.catalog.lookup(slot.gpu_name);
    const PhaseSpec unallocated{PhaseClass::deep, 1, spec.deep_idle_power.value_or(30.0), {}, std::nullopt};
    const auto emit_unallocated = [&](std::int64_t from, std::int64_t to) {
      for (auto t = from; t < to; ++t) {
        out.samples.push_back(
            detail::synthesize(t, slot, spec, unallocated, nullptr, false, sc.power_jitter, sc.signal_jitter, rng));
        out.labels.emplace_back("unallocated");
        out.phases.emplace_back("unallocated");
        ++out.report.unallocated_seconds;
      }
    };

    std::int64_t cursor = sc.start_time + sc.lead_unallocated;
    emit_unallocated(sc.start_time, cursor);
    for (const auto* job : per_gpu[g]) {
      const auto start = job->start_offset ? sc.start_time + *job->start_offset : cursor;
      if (start < cursor) {
        throw ScenarioError("overlapping phases on " + slot.hostname + ":" + slot.gpu_id + " at job " + job->job_id);
      }
      emit_unallocated(cursor, start);
      std::int64_t total = 0;
      for (const auto& ph : job->phases) total += ph.duration;

      const auto labels = detail::phase_labels(*job, sc.min_interval);
      std::int64_t t = start;
      std::size_t li = 0;
      for (std::size_t pi = 0; pi < job->phases.size(); ++pi) {
        const auto& ph = job->phases[pi];
        if (ph.cls == PhaseClass::low && pi > 0 && job->phases[pi - 1].cls == PhaseClass::active) {
          const auto& prev = job->phases[pi - 1];
          if (prev.fingerprint) {
            out.fingerprints.push_back({{job->job_id, slot.hostname, slot.gpu_id}, t, *prev.fingerprint});
          }
        }
        for (std::int64_t k = 0; k < ph.duration; ++k, ++t, ++li) {
          auto sample =
              detail::synthesize(t, slot, spec, ph, job, sc.emit_proc_resident, sc.power_jitter, sc.signal_jitter, rng);
          const auto e = Energy::from_watt_seconds(sample.power);
          const auto& label = labels[li];
          if (label == "deep-idle") {
            ++out.report.deep_seconds;
          } else if (label == "exec-idle") {
            ++out.report.exec_idle_seconds;
            out.report.exec_idle_energy += e;
          } else {
            ++out.report.active_seconds;
            out.report.active_energy += e;
          }
          out.samples.push_back(std::move(sample));
          out.labels.push_back(label);
          out.phases.emplace_back(ph.cls == PhaseClass::deep ? "deep" : ph.cls == PhaseClass::low ? "low" : "active");
        }
      }
      out.jobs.push_back({job->job_id, job->job_name, job->category, start, start + total - 1,
                          {GpuRef{slot.hostname, slot.gpu_id}}});
      cursor = start + total + sc.job_gap;
    }
    // trailing gap after the last job
    if (!per_gpu[g].empty() && sc.job_gap > 0) emit_unallocated(cursor - sc.job_gap, cursor);
  }

  auto& r = out.report;
  if (r.exec_idle_seconds + r.active_seconds > 0) {
    r.time_fraction = static_cast<double>(r.exec_idle_seconds) / static_cast<double>(r.exec_idle_seconds + r.active_seconds);
  }
  const auto ee = r.exec_idle_energy.microjoules(), ae = r.active_energy.microjoules();
  if (ee + ae > 0) r.energy_fraction = static_cast<double>(ee) / static_cast<double>(ee + ae);
  std::stable_sort(out.jobs.begin(), out.jobs.end(),
                   [](const JobRecord& a, const JobRecord& b) { return a.job_id < b.job_id; });
  return out;
}

// ---------------------------------------------------------------------------
// Parametric builders

namespace detail {

/// Splits `total` into `parts` positive integers with random proportions.
inline std::vector<std::int64_t> random_split(std::int64_t total, std::size_t parts, Rng& rng)
{
  if (parts == 0) return {};
  if (total < static_cast<std::int64_t>(parts)) throw ScenarioError("cannot split time into positive segments");
  std::vector<double> w(parts);
  for (auto& x : w) x = 0.2 + rng.uniform();
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  const auto spare = total - static_cast<std::int64_t>(parts);
  std::vector<std::int64_t> out(parts, 1);
  std::int64_t used = 0;
  for (std::size_t i = 0; i + 1 < parts; ++i) {
    const auto extra = static_cast<std::int64_t>(std::floor(static_cast<double>(spare) * w[i] / sum));
    out[i] += extra;
    used += extra;
  }
  out.back() += spare - used;
  return out;
}

/// Interval lengths >= floor_len summing to exactly `total` (total >= floor_len).
inline std::vector<std::int64_t> heavy_tailed_lengths(std::int64_t total, std::int64_t floor_len, double median,
                                                      double sigma, std::int64_t cap, Rng& rng)
{
  std::vector<std::int64_t> out;
  std::int64_t left = total;
  while (left > 0) {
    auto d = static_cast<std::int64_t>(std::llround(std::exp(rng.normal(std::log(median), sigma))));
    d = std::clamp(d, floor_len, cap);
    if (left - d < floor_len) d = left;
    out.push_back(d);
    left -= d;
  }
  return out;
}

inline std::vector<std::string> string_list(const nlohmann::json& params, const char* key,
                                            std::vector<std::string> fallback)
{
  if (!params.contains(key)) return fallback;
  return params.at(key).get<std::vector<std::string>>();
}

inline FingerprintLabel draw_fingerprint(Rng& rng, bool nvlink_capable)
{
  // Matches the relative frequency of the pre-idle categories.
  const double u = rng.uniform();
  if (u < 0.48) return FingerprintLabel::pcie_heavy;
  if (u < 0.81) return FingerprintLabel::compute_to_idle;
  if (u < 0.98 || !nvlink_capable) return FingerprintLabel::nic_heavy;
  return FingerprintLabel::nvlink_heavy;
}

inline bool nvlink_capable(const GpuModelSpec& spec)
{
  return spec.known() && spec.signal_available(Signal::nvlink_tx) && !spec.available_signals.empty();
}

}  // namespace detail

/// Multi-GPU, multi-job fleet fixture whose in-execution execution-idle time
/// share is exactly `target_time_fraction` and whose energy share is
/// `target_energy_fraction` up to power jitter.
inline Scenario build_cluster_mix(const Scenario& base, std::uint64_t seed)
{
  const auto& p = base.params;
  const auto num_gpus = p.value("num_gpus", std::size_t{12});
  const auto models = detail::string_list(p, "models", {"L40S", "A100 80GB PCIe", "RTX A6000"});
  const auto jobs_per_gpu = p.value("jobs_per_gpu", std::size_t{2});
  const auto len_min = p.value("job_length_min", std::int64_t{7200});
  const auto len_max = p.value("job_length_max", std::int64_t{10800});
  const auto setup_max = p.value("setup_max", std::int64_t{600});
  const auto time_target = p.value("target_time_fraction", 0.15);
  const auto energy_target = p.value("target_energy_fraction", 0.10);
  const auto blip_fraction = p.value("blip_fraction", 0.03);
  const auto interval_median = p.value("interval_median", 9.0);
  std::map<std::string, double> exec_power = {{"L40S", 110.0}, {"A100 80GB PCIe", 90.0}, {"RTX A6000", 95.0}};
  if (p.contains("exec_idle_power")) {
    for (const auto& [k, v] : p.at("exec_idle_power").items()) exec_power[k] = v.get<double>();
  }
  if (!(time_target > 0.0 && time_target < 0.6) || !(energy_target > 0.0 && energy_target < 1.0)) {
    throw ScenarioError("cluster-mix targets out of range");
  }
  if (models.empty() || num_gpus == 0 || jobs_per_gpu == 0 || len_min < 600 || len_max < len_min) {
    throw ScenarioError("cluster-mix: bad layout parameters");
  }

  Scenario sc = base;
  sc.kind = "explicit";
  sc.jobs.clear();
  sc.gpus.clear();
  Rng rng(seed);
  auto catalog = default_catalog();
  if (sc.catalog) merge_catalog_json(catalog, *sc.catalog);

  for (std::size_t g = 0; g < num_gpus; ++g) {
    char host[32];
    std::snprintf(host, sizeof(host), "node%02zu", g / 4);
    sc.gpus.push_back({host, std::to_string(g % 4), models[g % models.size()]});
    if (!exec_power.count(sc.gpus.back().gpu_name)) throw ScenarioError("no exec-idle power for " + sc.gpus.back().gpu_name);
  }

  struct Draft {
    std::size_t gpu;
    std::int64_t setup;
    std::int64_t inexec;
    std::int64_t exec = 0;
    std::int64_t blips = 0;
  };
  std::vector<Draft> drafts;
  std::int64_t total_inexec = 0;
  for (std::size_t g = 0; g < num_gpus; ++g) {
    for (std::size_t k = 0; k < jobs_per_gpu; ++k) {
      const auto len = 20 * rng.uniform_int(len_min / 20 + (len_min % 20 ? 1 : 0), len_max / 20);
      const auto setup = 20 * rng.uniform_int(0, setup_max / 20);
      drafts.push_back({g, setup, len - setup});
      total_inexec += len - setup;
    }
  }

  // Exact global exec-idle budget, spread with skewed per-job weights.
  const auto budget = static_cast<std::int64_t>(std::llround(static_cast<double>(total_inexec) * time_target));
  std::vector<double> w(drafts.size());
  for (auto& x : w) x = std::exp(rng.normal(0.0, 1.0));
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  const auto cap = [&](const Draft& d) { return static_cast<std::int64_t>(0.6 * static_cast<double>(d.inexec)); };
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    drafts[i].exec = std::min(cap(drafts[i]),
                              static_cast<std::int64_t>(std::floor(static_cast<double>(budget) * w[i] / wsum)));
    assigned += drafts[i].exec;
  }
  for (std::size_t i = 0; assigned < budget; i = (i + 1) % drafts.size()) {
    const auto add = std::min(budget - assigned, cap(drafts[i]) - drafts[i].exec);
    drafts[i].exec += add;
    assigned += add;
  }
  // Every job's share must form intervals of at least min_interval seconds.
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    if (drafts[i].exec > 0 && drafts[i].exec < sc.min_interval) {
      const auto j = (i + 1) % drafts.size();
      drafts[j].exec += drafts[i].exec;
      drafts[i].exec = 0;
    }
  }
  for (auto& d : drafts) d.blips = static_cast<std::int64_t>(std::llround(blip_fraction * static_cast<double>(d.inexec)));

  // Low-phase plans first; active power follows from the energy target.
  struct Plan {
    std::vector<std::int64_t> lows;  ///< exec-idle intervals and short blips, interleaved order
    std::int64_t active = 0;
  };
  std::vector<Plan> plans;
  std::map<std::string, std::array<double, 3>> model_time;  // exec, blip, active seconds
  for (const auto& d : drafts) {
    Plan plan;
    if (d.exec > 0) {
      plan.lows = detail::heavy_tailed_lengths(d.exec, sc.min_interval, interval_median, 1.1, 1800, rng);
    }
    std::int64_t b = d.blips;
    while (b > 0) {
      const auto len = std::min<std::int64_t>(b, rng.uniform_int(1, std::max<std::int64_t>(1, sc.min_interval - 1)));
      plan.lows.push_back(len);
      b -= len;
    }
    std::shuffle(plan.lows.begin(), plan.lows.end(), rng.engine());
    plan.active = d.inexec - d.exec - d.blips;
    if (plan.active < static_cast<std::int64_t>(plan.lows.size()) + 1) throw ScenarioError("cluster-mix: job too short");
    auto& mt = model_time[sc.gpus[d.gpu].gpu_name];
    mt[0] += static_cast<double>(d.exec);
    mt[1] += static_cast<double>(d.blips);
    mt[2] += static_cast<double>(plan.active);
    plans.push_back(std::move(plan));
  }
  double num = 0.0, den = 0.0;
  for (const auto& [model, t] : model_time) {
    const double pe = exec_power.at(model);
    num += pe * (t[0] * (1.0 / energy_target - 1.0) - t[1]);
    den += pe * t[2];
  }
  const double active_ratio = num / den;
  if (!(active_ratio > 1.0)) throw ScenarioError("cluster-mix: energy target needs active power below exec-idle power");

  const std::array<JobCategory, 4> categories = {JobCategory::serving, JobCategory::training,
                                                 JobCategory::batch_inference, JobCategory::other};
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    const auto& d = drafts[i];
    const auto& slot = sc.gpus[d.gpu];
    const auto spec = catalog.lookup(slot.gpu_name);
    const double pe = exec_power.at(slot.gpu_name);
    const double pa = pe * active_ratio;
    const bool nvl = detail::nvlink_capable(spec);
    JobSpec job;
    char id[32];
    std::snprintf(id, sizeof(id), "J%04zu", i);
    job.job_id = id;
    job.job_name = "job-" + std::to_string(i);
    job.category = categories[rng.uniform_int(0, 3)];
    job.gpu = d.gpu;
    // One extra setup second so end - start equals the drawn job length.
    job.phases.push_back({PhaseClass::deep, d.setup + 1, spec.deep_idle_power.value_or(30.0) + 1.0, {}, {}});
    const auto& plan = plans[i];
    const auto actives = detail::random_split(plan.active, plan.lows.size() + 1, rng);
    for (std::size_t k = 0; k <= plan.lows.size(); ++k) {
      const auto fp = detail::draw_fingerprint(rng, nvl);
      job.phases.push_back({PhaseClass::active, actives[k], pa, fingerprint_levels(fp), fp});
      if (k < plan.lows.size()) job.phases.push_back({PhaseClass::low, plan.lows[k], pe, {}, {}});
    }
    sc.jobs.push_back(std::move(job));
  }
  if (sc.job_gap == 0) sc.job_gap = p.value("gap", std::int64_t{300});
  return sc;
}

/// Telemetry whose execution-idle intervals are each preceded by a 10 s
/// active segment carrying one injected fingerprint, in exact mixture
/// proportions.
inline Scenario build_preidle_corpus(const Scenario& base, std::uint64_t seed)
{
  const auto& p = base.params;
  const auto windows = p.value("windows", std::size_t{1000});
  std::map<std::string, double> mixture = {
      {"pcie-heavy", 0.48}, {"compute-to-idle", 0.33}, {"nic-heavy", 0.17}, {"nvlink-heavy", 0.02}};
  if (p.contains("mixture")) {
    mixture.clear();
    for (const auto& [k, v] : p.at("mixture").items()) mixture[k] = v.get<double>();
  }
  const auto models = detail::string_list(p, "models", {"L40S", "L40S", "L40S", "A100 80GB PCIe", "A100 80GB PCIe"});
  const auto active_len = p.value("active_length", std::int64_t{10});
  const auto idle_min = p.value("idle_min", std::int64_t{8});
  const auto idle_max = p.value("idle_max", std::int64_t{40});
  const auto min_job_len = p.value("min_job_length", std::int64_t{7200});
  const auto pe = p.value("exec_idle_power", 105.0);
  const auto pa = p.value("active_power", 180.0);
  if (idle_min < base.min_interval || idle_max < idle_min || active_len < 1) throw ScenarioError("preidle-corpus: bad lengths");

  Scenario sc = base;
  sc.kind = "explicit";
  sc.jobs.clear();
  sc.gpus.clear();
  auto catalog = default_catalog();
  if (sc.catalog) merge_catalog_json(catalog, *sc.catalog);
  std::vector<std::size_t> nvl_gpus;
  for (std::size_t g = 0; g < models.size(); ++g) {
    sc.gpus.push_back({"corpus" + std::to_string(g / 4), std::to_string(g % 4), models[g]});
    if (detail::nvlink_capable(catalog.lookup(models[g]))) nvl_gpus.push_back(g);
  }

  // Exact counts by largest remainder.
  std::vector<std::pair<FingerprintLabel, std::size_t>> counts;
  double total_w = 0.0;
  for (const auto& [k, v] : mixture) total_w += v;
  std::size_t given = 0;
  std::vector<std::pair<double, std::size_t>> remainders;
  for (const auto& [k, v] : mixture) {
    const double exact = static_cast<double>(windows) * v / total_w;
    counts.push_back({fingerprint_label_from_string(k), static_cast<std::size_t>(std::floor(exact))});
    given += counts.back().second;
    remainders.push_back({exact - std::floor(exact), counts.size() - 1});
  }
  std::sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  for (std::size_t i = 0; given < windows; ++i, ++given) counts[remainders[i % remainders.size()].second].second++;

  Rng rng(seed);
  std::vector<std::vector<FingerprintLabel>> per_gpu(sc.gpus.size());
  std::size_t rr = 0;
  for (const auto& [label, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      if (label == FingerprintLabel::nvlink_heavy) {
        if (nvl_gpus.empty()) throw ScenarioError("preidle-corpus: nvlink windows need an NVLink-capable GPU");
        per_gpu[nvl_gpus[i % nvl_gpus.size()]].push_back(label);
      } else {
        per_gpu[rr++ % sc.gpus.size()].push_back(label);
      }
    }
  }
  for (std::size_t g = 0; g < sc.gpus.size(); ++g) {
    std::shuffle(per_gpu[g].begin(), per_gpu[g].end(), rng.engine());
    JobSpec job;
    job.job_id = "C" + std::to_string(g);
    job.job_name = "corpus-" + std::to_string(g);
    job.category = JobCategory::other;
    job.gpu = g;
    const auto spec = catalog.lookup(sc.gpus[g].gpu_name);
    job.phases.push_back({PhaseClass::deep, 20, spec.deep_idle_power.value_or(30.0) + 1.0, {}, {}});
    std::int64_t len = 20;
    for (auto label : per_gpu[g]) {
      job.phases.push_back({PhaseClass::active, active_len, pa, fingerprint_levels(label), label});
      const auto idle = rng.uniform_int(idle_min, idle_max);
      job.phases.push_back({PhaseClass::low, idle, pe, {}, {}});
      len += active_len + idle;
    }
    if (len <= min_job_len) job.phases.push_back({PhaseClass::active, min_job_len + 1 - len, pa, {}, {}});
    sc.jobs.push_back(std::move(job));
  }
  return sc;
}

/// Expands parametric telemetry kinds; explicit scenarios pass through.
inline Scenario expand_scenario(const Scenario& sc, std::uint64_t seed)
{
  if (sc.kind == "explicit") return sc;
  if (sc.kind == "cluster-mix") return build_cluster_mix(sc, seed);
  if (sc.kind == "preidle-corpus") return build_preidle_corpus(sc, seed);
  throw ScenarioError("scenario kind '" + sc.kind + "' does not produce telemetry");
}

inline bool is_trace_kind(const std::string& kind) { return kind == "poisson-trace" || kind == "bursty-trace"; }

inline GeneratedTelemetry generate_synthetic(const Scenario& sc, std::uint64_t seed)
{
  // Layout and sample noise draw from separate streams so the same layout
  // seed always yields the same phase plan.
  return generate_explicit(expand_scenario(sc, seed), seed ^ 0x9e3779b97f4a7c15ULL);
}

// ---------------------------------------------------------------------------
// Request traces

struct GeneratedTrace {
  std::vector<Request> requests;
  double duration = 0.0;
  double mean_gap = 0.0;
  double median_gap = 0.0;
};

/// "poisson-trace": exponential gaps at `rate`/s. "bursty-trace": with
/// probability `burst_probability` the next gap is uniform in
/// [burst_gap_min, burst_gap_max], otherwise `lull_offset` plus an
/// exponential with mean `lull_mean`.
inline GeneratedTrace generate_trace(const Scenario& sc, std::uint64_t seed)
{
  const auto& p = sc.params;
  GeneratedTrace out;
  out.duration = p.value("duration", 1800.0);
  const auto in_min = p.value("input_tokens_min", std::int64_t{200});
  const auto in_max = p.value("input_tokens_max", std::int64_t{1200});
  const auto out_min = p.value("output_tokens_min", std::int64_t{20});
  const auto out_max = p.value("output_tokens_max", std::int64_t{120});
  if (in_min < 1 || out_min < 1 || in_max < in_min || out_max < out_min || !(out.duration > 0.0)) {
    throw ScenarioError("trace: bad token or duration parameters");
  }
  Rng rng(seed);
  std::function<double()> next_gap;
  if (sc.kind == "poisson-trace") {
    const auto rate = p.value("rate", 0.2);
    if (!(rate > 0.0)) throw ScenarioError("poisson-trace: rate must be positive");
    next_gap = [&rng, rate] { return rng.exponential(rate); };
  } else if (sc.kind == "bursty-trace") {
    const auto pb = p.value("burst_probability", 0.55);
    const auto bmin = p.value("burst_gap_min", 0.5);
    const auto bmax = p.value("burst_gap_max", 6.0);
    const auto loff = p.value("lull_offset", 4.0);
    const auto lmean = p.value("lull_mean", 12.0);
    if (!(pb >= 0.0 && pb <= 1.0) || !(bmin >= 0.0 && bmax >= bmin) || !(lmean > 0.0) || loff < 0.0) {
      throw ScenarioError("bursty-trace: bad gap parameters");
    }
    next_gap = [&rng, pb, bmin, bmax, loff, lmean] {
      return rng.bernoulli(pb) ? rng.uniform(bmin, bmax) : loff + rng.exponential(1.0 / lmean);
    };
  } else {
    throw ScenarioError("scenario kind '" + sc.kind + "' does not produce a trace");
  }

  double t = p.value("first_arrival", 0.0);
  std::int64_t id = 0;
  while (t <= out.duration) {
    // Millisecond resolution keeps the trace file compact and exact.
    const double arrival = std::round(t * 1000.0) / 1000.0;
    if (arrival > out.duration) break;
    out.requests.push_back({arrival, rng.uniform_int(in_min, in_max), rng.uniform_int(out_min, out_max), id++});
    t += next_gap();
  }
  std::vector<double> arrivals;
  for (const auto& r : out.requests) arrivals.push_back(r.arrival);
  const auto gaps = inter_request_gaps({arrivals});
  if (!gaps.empty()) {
    out.mean_gap = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
    out.median_gap = stats::median(gaps);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground-truth export

inline void write_ground_truth(std::ostream& out, const GeneratedTelemetry& g)
{
  out << "timestamp,hostname,gpu_id,job_id,phase,label\n";
  for (std::size_t i = 0; i < g.samples.size(); ++i) {
    const auto& s = g.samples[i];
    out << s.timestamp << ',' << s.hostname << ',' << s.gpu_id << ',' << s.job_id.value_or("") << ',' << g.phases[i] << ',' << g.labels[i]
        << '\n';
  }
}

inline void write_fingerprint_truth(std::ostream& out, const std::vector<FingerprintTruth>& truth)
{
  out << "job_id,hostname,gpu_id,interval_start,label\n";
  for (const auto& t : truth) {
    out << t.key.job_id << ',' << t.key.hostname << ',' << t.key.gpu_id << ',' << t.interval_start << ','
        << to_string(t.label) << '\n';
  }
}

inline std::vector<FingerprintTruth> parse_fingerprint_truth(std::istream& in)
{
  std::vector<FingerprintTruth> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  const records::Header h(line);
  const auto cj = h.require("job_id"), ch = h.require("hostname"), cg = h.require("gpu_id"),
             cs = h.require("interval_start"), cl = h.require("label");
  while (std::getline(in, line)) {
    if (records::trim(line).empty()) continue;
    const auto f = records::split(line);
    if (f.size() != h.size()) throw std::invalid_argument("malformed fingerprint truth line");
    out.push_back({{std::string(f[cj]), std::string(f[ch]), std::string(f[cg])}, *records::parse_int(f[cs]),
                   fingerprint_label_from_string(f[cl])});
  }
  return out;
}

}  // namespace xidle
