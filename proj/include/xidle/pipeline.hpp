#pragma once

// End-to-end analysis: attribute -> residency -> classify -> intervals ->
// accounting, plus the threshold sweep that reruns it per setting.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xidle/accounting.hpp"
#include "xidle/catalog.hpp"
#include "xidle/classifier.hpp"
#include "xidle/telemetry.hpp"

namespace xidle {

struct Dataset {
  std::vector<TelemetrySample> samples;
  std::vector<JobRecord> jobs;
  GpuCatalog catalog;
};

inline constexpr std::int64_t kDefaultJobCutoff = 2 * 3600;

struct StreamResult {
  StreamKey key;
  StateTimeline timeline;
  std::vector<ExecIdleInterval> intervals;
  StateBreakdown breakdown;
};

struct AnalysisResult {
  std::vector<StreamResult> streams;               ///< ordered by stream key
  std::map<std::string, StateBreakdown> jobs;      ///< per kept job, summed over its GPUs
  StateBreakdown fleet;                            ///< job-attributed, summed in stream-key order
  FractionReport fractions;
  std::vector<ExecIdleInterval> intervals;         ///< all streams, stream-key order
  std::size_t kept_jobs = 0;
  std::size_t excluded_job_samples = 0;            ///< samples of jobs below the cutoff
  std::size_t unallocated_samples = 0;
  Energy unallocated_energy;
  Energy observed_energy;                          ///< every sample, attributed or not
  std::vector<std::string> skipped_streams;        ///< residency could not be determined
  std::optional<TdpComparison> tdp;
  std::string tdp_error;
};

/// Fleet-level TDP bound over every GPU that reported telemetry.
inline TdpComparison fleet_tdp_comparison(const Dataset& ds)
{
  std::map<std::string, std::set<GpuRef>> gpus_by_model;
  Energy observed;
  for (const auto& s : ds.samples) {
    gpus_by_model[s.gpu_name].insert({s.hostname, s.gpu_id});
    observed += Energy::from_watt_seconds(s.power, kSamplePeriod);
  }
  std::vector<InventoryEntry> inventory;
  for (const auto& [model, gpus] : gpus_by_model) inventory.push_back({ds.catalog.lookup(model), gpus.size()});
  std::int64_t window = 0;
  if (!ds.samples.empty()) {
    const auto [lo, hi] = std::minmax_element(ds.samples.begin(), ds.samples.end(),
                                              [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    window = hi->timestamp - lo->timestamp + kSamplePeriod;
  }
  return tdp_comparison(inventory, window, observed);
}

inline AnalysisResult analyze_dataset(const Dataset& ds, const ClassifierConfig& cfg,
                                      std::int64_t job_cutoff = kDefaultJobCutoff)
{
  cfg.validate();
  AnalysisResult r;

  std::set<std::string> kept;
  for (const auto& j : filter_long_jobs(ds.jobs, job_cutoff)) kept.insert(j.job_id);
  r.kept_jobs = kept.size();

  const auto attribution = attribute_samples(ds.samples, ds.jobs);
  for (const auto& s : attribution.unallocated) r.unallocated_energy += Energy::from_watt_seconds(s.power);
  r.unallocated_samples = attribution.unallocated.size();

  for (const auto& [key, stream] : attribution.streams) {
    if (!kept.count(key.job_id)) {
      r.excluded_job_samples += stream.size();
      continue;
    }
    const auto spec = ds.catalog.lookup(stream.front().gpu_name);
    std::vector<ClassifiedSample> classified;
    try {
      classified = classify_stream(stream, spec, cfg);
    } catch (const ResidencyError& e) {
      r.skipped_streams.push_back(key.job_id + "/" + key.hostname + ":" + key.gpu_id + ": " + e.what());
      continue;
    }
    auto detection = detect_intervals(key, classified, cfg);
    StreamResult sr;
    sr.key = key;
    sr.breakdown = state_breakdown(detection.timeline, stream);
    sr.timeline = std::move(detection.timeline);
    sr.intervals = std::move(detection.intervals);
    r.jobs[key.job_id] += sr.breakdown;
    r.fleet += sr.breakdown;
    r.intervals.insert(r.intervals.end(), sr.intervals.begin(), sr.intervals.end());
    r.streams.push_back(std::move(sr));
  }
  for (const auto& s : ds.samples) r.observed_energy += Energy::from_watt_seconds(s.power);
  r.fractions = in_execution_fractions(r.fleet);

  try {
    r.tdp = fleet_tdp_comparison(ds);
  } catch (const MissingTdpError& e) {
    r.tdp_error = e.what();
  }
  return r;
}

struct RobustnessRow {
  std::int64_t job_cutoff = 0;
  std::int64_t min_interval = 0;
  FractionReport fractions;
};

/// One full re-analysis per (cutoff, min_interval) pair, cutoffs outermost.
inline std::vector<RobustnessRow> robustness_sweep(const Dataset& ds, const ClassifierConfig& base,
                                                   const std::vector<std::int64_t>& cutoffs,
                                                   const std::vector<std::int64_t>& min_intervals)
{
  std::vector<RobustnessRow> rows;
  for (auto cutoff : cutoffs) {
    for (auto mi : min_intervals) {
      auto cfg = base;
      cfg.min_interval = mi;
      rows.push_back({cutoff, mi, analyze_dataset(ds, cfg, cutoff).fractions});
    }
  }
  return rows;
}

}  // namespace xidle
