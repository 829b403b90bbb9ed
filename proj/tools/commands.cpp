#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "manifest.hpp"
#include "xidle/accounting.hpp"
#include "xidle/catalog.hpp"
#include "xidle/classifier.hpp"
#include "xidle/pipeline.hpp"
#include "xidle/preidle.hpp"
#include "xidle/sim_config.hpp"
#include "xidle/simulator.hpp"
#include "xidle/synthetic.hpp"
#include "xidle/telemetry.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xidle::cli {

namespace {

/// A declared failure: message printed, exit status 1.
class CommandError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const fs::path& dir, const std::string& name)
{
  std::ofstream out(dir / name);
  if (!out) throw CommandError("cannot write '" + (dir / name).string() + "'");
  return out;
}

json read_json_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw CommandError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CommandError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void prepare_out_dir(const fs::path& dir)
{
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw CommandError("cannot create output directory '" + dir.string() + "'");
}

/// Arguments echoed into the manifest; the output directory is left out so
/// reruns into a different directory describe the same run.
std::vector<std::string> manifest_args(const std::vector<std::string>& args)
{
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out" || args[i] == "-o") {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) continue;
    out.push_back(args[i]);
  }
  return out;
}

std::string pct(double v)
{
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v << '%';
  return os.str();
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOptions {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_generate(const GenerateOptions& o, const std::vector<std::string>& args, std::ostream& out)
{
  const auto doc = read_json_file(o.scenario);
  Scenario sc;
  try {
    sc = parse_scenario(doc);
  } catch (const ScenarioError& e) {
    throw CommandError(e.what());
  }
  const fs::path dir(o.out);
  prepare_out_dir(dir);
  RunManifest manifest("generate", manifest_args(args));
  manifest.set_seed(o.seed);
  manifest.set_config(doc);
  manifest.add_input("scenario", o.scenario);

  json report{{"scenario", sc.name}, {"kind", sc.kind}, {"seed", o.seed}};
  try {
    if (is_trace_kind(sc.kind)) {
      const auto tr = generate_trace(sc, o.seed);
      auto f = open_out(dir, "trace.csv");
      write_trace(f, tr.requests);
      report["requests"] = tr.requests.size();
      report["duration_s"] = tr.duration;
      report["mean_gap_s"] = tr.mean_gap;
      report["median_gap_s"] = tr.median_gap;
      out << "generated " << tr.requests.size() << " requests over " << tr.duration << " s (mean gap "
          << records::format_fixed(tr.mean_gap, 3) << " s, median gap " << records::format_fixed(tr.median_gap, 3)
          << " s)\n";
    } else {
      const auto g = generate_synthetic(sc, o.seed);
      {
        auto f = open_out(dir, "telemetry.csv");
        write_telemetry(f, g.samples);
      }
      {
        auto f = open_out(dir, "jobs.csv");
        write_jobs(f, g.jobs);
      }
      {
        auto f = open_out(dir, "ground_truth.csv");
        write_ground_truth(f, g);
      }
      if (!g.fingerprints.empty()) {
        auto f = open_out(dir, "fingerprint_truth.csv");
        write_fingerprint_truth(f, g.fingerprints);
      }
      if (sc.catalog) {
        auto f = open_out(dir, "catalog.json");
        f << sc.catalog->dump(2) << '\n';
      }
      const auto& r = g.report;
      report["samples"] = g.samples.size();
      report["jobs"] = g.jobs.size();
      report["deep_idle_s"] = r.deep_seconds;
      report["exec_idle_s"] = r.exec_idle_seconds;
      report["active_s"] = r.active_seconds;
      report["unallocated_s"] = r.unallocated_seconds;
      report["exec_idle_energy_j"] = format_joules(r.exec_idle_energy);
      report["active_energy_j"] = format_joules(r.active_energy);
      report["exec_idle_time_fraction"] = r.time_fraction;
      report["exec_idle_energy_fraction"] = r.energy_fraction;
      report["fingerprinted_windows"] = g.fingerprints.size();
      out << "generated " << g.samples.size() << " samples, " << g.jobs.size() << " jobs\n"
          << "ground-truth in-execution exec-idle share: time " << pct(r.time_fraction) << ", energy "
          << pct(r.energy_fraction) << '\n';
    }
  } catch (const ScenarioError& e) {
    throw CommandError(e.what());
  }
  {
    auto f = open_out(dir, "generator_report.json");
    f << report.dump(2) << '\n';
  }
  manifest.write(dir);
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  std::vector<std::string> telemetry;
  std::string jobs;
  std::string catalog;
  std::string config;
  std::string out;
  std::optional<double> activity_threshold;
  std::optional<double> comm_threshold;
  std::optional<std::int64_t> min_interval;
  std::optional<std::int64_t> max_sample_gap;
  std::optional<double> residency_margin;
  std::optional<std::int64_t> job_cutoff;
  std::vector<std::int64_t> sweep_cutoffs;
  std::vector<std::int64_t> sweep_min_intervals;
};

struct AnalyzeSettings {
  ClassifierConfig classifier;
  std::int64_t job_cutoff = kDefaultJobCutoff;
  std::vector<std::int64_t> sweep_cutoffs{7200, 3600};
  std::vector<std::int64_t> sweep_min_intervals{1, 5, 10};

  json to_json() const
  {
    return {{"activity_threshold", classifier.activity_threshold},
            {"comm_threshold_mbps", classifier.comm_threshold},
            {"min_interval_s", classifier.min_interval},
            {"max_sample_gap_s", classifier.max_sample_gap},
            {"residency_power_margin_w", classifier.residency_power_margin},
            {"job_cutoff_s", job_cutoff},
            {"sweep_cutoffs_s", sweep_cutoffs},
            {"sweep_min_intervals_s", sweep_min_intervals}};
  }
};

AnalyzeSettings resolve_settings(const AnalyzeOptions& o)
{
  AnalyzeSettings s;
  if (!o.config.empty()) {
    const auto j = read_json_file(o.config);
    try {
      auto& c = s.classifier;
      c.activity_threshold = j.value("activity_threshold", c.activity_threshold);
      c.comm_threshold = j.value("comm_threshold_mbps", c.comm_threshold);
      c.min_interval = j.value("min_interval_s", c.min_interval);
      c.max_sample_gap = j.value("max_sample_gap_s", c.max_sample_gap);
      c.residency_power_margin = j.value("residency_power_margin_w", c.residency_power_margin);
      s.job_cutoff = j.value("job_cutoff_s", s.job_cutoff);
      s.sweep_cutoffs = j.value("sweep_cutoffs_s", s.sweep_cutoffs);
      s.sweep_min_intervals = j.value("sweep_min_intervals_s", s.sweep_min_intervals);
    } catch (const json::exception& e) {
      throw CommandError("bad analysis config: " + std::string(e.what()));
    }
  }
  if (o.activity_threshold) s.classifier.activity_threshold = *o.activity_threshold;
  if (o.comm_threshold) s.classifier.comm_threshold = *o.comm_threshold;
  if (o.min_interval) s.classifier.min_interval = *o.min_interval;
  if (o.max_sample_gap) s.classifier.max_sample_gap = *o.max_sample_gap;
  if (o.residency_margin) s.classifier.residency_power_margin = *o.residency_margin;
  if (o.job_cutoff) s.job_cutoff = *o.job_cutoff;
  if (!o.sweep_cutoffs.empty()) s.sweep_cutoffs = o.sweep_cutoffs;
  if (!o.sweep_min_intervals.empty()) s.sweep_min_intervals = o.sweep_min_intervals;
  try {
    s.classifier.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError(e.what());
  }
  if (s.job_cutoff < 0) throw CommandError("job cutoff must be >= 0");
  return s;
}

struct IngestSummary {
  std::string file;
  std::size_t kept = 0;
  std::size_t malformed = 0;
  std::size_t duplicates = 0;
  std::size_t unknown_gpu = 0;
};

/// Parses and merges telemetry files; later duplicates of a
/// (host, gpu, timestamp) key are dropped.
std::vector<TelemetrySample> load_telemetry(const std::vector<std::string>& paths, const GpuCatalog& catalog,
                                            std::vector<IngestSummary>& summary)
{
  std::vector<TelemetrySample> all;
  for (const auto& p : paths) {
    TelemetryParseResult r;
    try {
      r = parse_telemetry_file(p, catalog);
    } catch (const IngestError& e) {
      throw CommandError(e.what());
    }
    summary.push_back({p, r.samples.size(), r.malformed, r.duplicates, r.unknown_gpu_samples});
    all.insert(all.end(), std::make_move_iterator(r.samples.begin()), std::make_move_iterator(r.samples.end()));
  }
  const auto key = [](const TelemetrySample& s) { return std::tie(s.hostname, s.gpu_id, s.timestamp); };
  std::stable_sort(all.begin(), all.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  const auto last = std::unique(all.begin(), all.end(), [&](const auto& a, const auto& b) { return key(a) == key(b); });
  const auto cross = static_cast<std::size_t>(all.end() - last);
  all.erase(last, all.end());
  if (cross > 0 && !summary.empty()) summary.back().duplicates += cross;
  return all;
}

GpuCatalog load_catalog(const std::string& path)
{
  if (path.empty()) return default_catalog();
  try {
    return load_catalog_file(path);
  } catch (const std::exception& e) {
    throw CommandError(std::string("catalog: ") + e.what());
  }
}

void write_cdf(std::ostream& f, const char* value_name, const std::vector<stats::CdfPoint>& cdf)
{
  f << value_name << ",cumulative\n";
  for (const auto& p : cdf) f << records::format_double(p.value) << ',' << records::format_double(p.cumulative) << '\n';
}

void cmd_analyze(const AnalyzeOptions& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  const auto settings = resolve_settings(o);
  const auto catalog = load_catalog(o.catalog);
  const fs::path dir(o.out);

  RunManifest manifest("analyze", manifest_args(args));
  manifest.set_config(settings.to_json());
  for (const auto& t : o.telemetry) {
    if (!fs::is_regular_file(t)) throw CommandError("cannot open telemetry '" + t + "'");
    manifest.add_input("telemetry", t);
  }
  if (!o.jobs.empty()) {
    if (!fs::is_regular_file(o.jobs)) throw CommandError("cannot open job log '" + o.jobs + "'");
    manifest.add_input("jobs", o.jobs);
  }
  if (!o.catalog.empty()) manifest.add_input("catalog", o.catalog);
  if (!o.config.empty()) manifest.add_input("config", o.config);

  std::vector<IngestSummary> ingest;
  Dataset ds;
  ds.catalog = catalog;
  ds.samples = load_telemetry(o.telemetry, catalog, ingest);
  if (!o.jobs.empty()) {
    const auto jr = parse_jobs_file(o.jobs);
    ds.jobs = jr.jobs;
    if (jr.malformed > 0) err << "warning: " << jr.malformed << " malformed job records skipped\n";
  } else {
    ds.jobs = derive_jobs_from_samples(ds.samples);
  }

  AnalysisResult r;
  std::vector<RobustnessRow> sweep;
  try {
    r = analyze_dataset(ds, settings.classifier, settings.job_cutoff);
    sweep = robustness_sweep(ds, settings.classifier, settings.sweep_cutoffs, settings.sweep_min_intervals);
  } catch (const AttributionError& e) {
    throw CommandError(e.what());
  }
  for (const auto& s : r.skipped_streams) err << "warning: stream skipped, " << s << '\n';
  if (!r.tdp_error.empty()) err << "warning: TDP bound unavailable, " << r.tdp_error << '\n';

  prepare_out_dir(dir);
  {
    auto f = open_out(dir, "ingest.csv");
    f << "file,samples_kept,malformed,duplicates,unknown_gpu_samples\n";
    for (const auto& s : ingest) {
      f << s.file << ',' << s.kept << ',' << s.malformed << ',' << s.duplicates << ',' << s.unknown_gpu << '\n';
    }
  }
  {
    auto f = open_out(dir, "breakdown.csv");
    f << "scope,state,time_s,energy_j\n";
    for (auto st : kStates) {
      f << "jobs," << to_string(st) << ',' << r.fleet.time_in(st) << ',' << format_joules(r.fleet.energy_in(st)) << '\n';
    }
    f << "jobs,total," << r.fleet.total_time << ',' << format_joules(r.fleet.total_energy) << '\n';
    f << "unallocated,total," << r.unallocated_samples << ',' << format_joules(r.unallocated_energy) << '\n';
    f << "excluded_short_jobs,total," << r.excluded_job_samples << ",\n";
    f << "observed,total," << ds.samples.size() << ',' << format_joules(r.observed_energy) << '\n';
  }
  {
    auto f = open_out(dir, "fractions.csv");
    f << "time_fraction,energy_fraction,exec_idle_s,in_execution_s,exec_idle_j,in_execution_j,kept_jobs\n";
    const auto ei = r.fleet.time_in(GpuState::exec_idle), ac = r.fleet.time_in(GpuState::active);
    f << records::format_double(r.fractions.time_fraction) << ',' << records::format_double(r.fractions.energy_fraction)
      << ',' << ei << ',' << ei + ac << ',' << format_joules(r.fleet.energy_in(GpuState::exec_idle)) << ','
      << format_joules(r.fleet.energy_in(GpuState::exec_idle) + r.fleet.energy_in(GpuState::active)) << ','
      << r.kept_jobs << '\n';
  }
  const auto per_job = per_job_fractions(r.jobs);
  {
    auto f = open_out(dir, "per_job_fractions.csv");
    f << "job_id,deep_idle_s,exec_idle_s,active_s,deep_idle_j,exec_idle_j,active_j,time_fraction,energy_fraction\n";
    for (const auto& jf : per_job) {
      const auto& b = r.jobs.at(jf.job_id);
      f << jf.job_id;
      for (auto st : kStates) f << ',' << b.time_in(st);
      for (auto st : kStates) f << ',' << format_joules(b.energy_in(st));
      f << ',' << records::format_double(jf.fractions.time_fraction) << ','
        << records::format_double(jf.fractions.energy_fraction) << '\n';
    }
  }
  {
    auto f = open_out(dir, "cdf_time.csv");
    write_cdf(f, "time_fraction", fraction_cdf(per_job, FractionKind::time));
  }
  {
    auto f = open_out(dir, "cdf_energy.csv");
    write_cdf(f, "energy_fraction", fraction_cdf(per_job, FractionKind::energy));
  }
  {
    auto f = open_out(dir, "robustness.csv");
    f << "job_cutoff_s,min_interval_s,time_fraction,energy_fraction\n";
    for (const auto& row : sweep) {
      f << row.job_cutoff << ',' << row.min_interval << ',' << records::format_double(row.fractions.time_fraction)
        << ',' << records::format_double(row.fractions.energy_fraction) << '\n';
    }
  }
  const auto durations = interval_duration_stats(r.intervals);
  {
    auto f = open_out(dir, "durations.csv");
    f << "count,p50_s,p90_s,p99_s\n" << durations.count << ',';
    if (durations.empty) {
      f << ",,\n";
    } else {
      f << durations.p50 << ',' << durations.p90 << ',' << durations.p99 << '\n';
    }
  }
  {
    auto f = open_out(dir, "durations_cdf.csv");
    write_cdf(f, "duration_s", durations.cdf);
  }
  {
    auto f = open_out(dir, "tdp.csv");
    f << "observed_j,bound_j,ratio,error\n";
    if (r.tdp) {
      f << records::format_double(r.tdp->observed_joules) << ',' << records::format_double(r.tdp->bound_joules) << ','
        << records::format_double(r.tdp->ratio) << ",\n";
    } else {
      f << ",,," << r.tdp_error << '\n';
    }
  }
  {
    std::vector<StateTimeline> timelines;
    for (const auto& s : r.streams) timelines.push_back(s.timeline);
    auto f = open_out(dir, "timeline.csv");
    write_timelines(f, timelines);
  }
  {
    auto f = open_out(dir, "intervals.csv");
    write_intervals(f, r.intervals);
  }

  std::ostringstream table;
  table << "samples " << ds.samples.size() << ", jobs " << ds.jobs.size() << " (" << r.kept_jobs << " >= "
        << settings.job_cutoff << " s), streams " << r.streams.size() << ", unallocated samples "
        << r.unallocated_samples << "\n\n";
  table << std::left << std::setw(12) << "state" << std::right << std::setw(14) << "time_s" << std::setw(20)
        << "energy_j" << '\n';
  for (auto st : kStates) {
    table << std::left << std::setw(12) << to_string(st) << std::right << std::setw(14) << r.fleet.time_in(st)
          << std::setw(20) << format_joules(r.fleet.energy_in(st)) << '\n';
  }
  table << "\nin-execution exec-idle share: time " << pct(r.fractions.time_fraction) << ", energy "
        << pct(r.fractions.energy_fraction) << '\n';
  if (!durations.empty) {
    table << "exec-idle intervals: " << durations.count << ", p50 " << durations.p50 << " s, p90 " << durations.p90
          << " s, p99 " << durations.p99 << " s\n";
  }
  if (r.tdp) table << "observed / TDP-bound energy: " << pct(r.tdp->ratio) << '\n';
  table << "\nrobustness (cutoff_s, min_interval_s -> time, energy)\n";
  for (const auto& row : sweep) {
    table << "  " << row.job_cutoff << ", " << row.min_interval << " -> " << pct(row.fractions.time_fraction) << ", "
          << pct(row.fractions.energy_fraction) << '\n';
  }
  {
    auto f = open_out(dir, "summary.txt");
    f << table.str();
  }
  out << table.str();
  manifest.write(dir);
}

// ---------------------------------------------------------------------------
// preidle

struct PreidleOptions {
  std::string analysis;
  std::vector<std::string> telemetry;
  std::string catalog;
  std::string truth;
  std::string out;
  std::size_t min_cluster_size = 5;
  std::optional<double> radius;
  std::int64_t window = kPreIdleWindow;
  double dominance_margin = 0.5;
  double cpu_elevated = 0.5;
};

void cmd_preidle(PreidleOptions o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  const fs::path adir(o.analysis);
  const auto timeline_path = adir / "timeline.csv", intervals_path = adir / "intervals.csv";
  if (!fs::is_regular_file(timeline_path) || !fs::is_regular_file(intervals_path)) {
    throw CommandError("analysis directory '" + o.analysis + "' lacks timeline.csv or intervals.csv");
  }
  if (o.telemetry.empty() || o.catalog.empty()) {
    const auto mpath = adir / "manifest.json";
    if (!fs::is_regular_file(mpath)) throw CommandError("no --telemetry given and no analysis manifest to find it");
    const auto m = read_json_file(mpath.string());
    for (const auto& in : m.value("inputs", json::array())) {
      const auto role = in.value("role", std::string());
      if (role == "telemetry" && o.telemetry.empty()) o.telemetry.push_back(in.at("path").get<std::string>());
      if (role == "catalog" && o.catalog.empty()) o.catalog = in.at("path").get<std::string>();
    }
  }
  if (o.min_cluster_size < 1) throw CommandError("min cluster size must be >= 1");
  if (o.window < 1) throw CommandError("window must be >= 1 s");

  RunManifest manifest("preidle", manifest_args(args));
  json cfg{{"min_cluster_size", o.min_cluster_size},
           {"radius", o.radius ? json(*o.radius) : json(nullptr)},
           {"window_s", o.window},
           {"dominance_margin_z", o.dominance_margin},
           {"cpu_elevated_z", o.cpu_elevated}};
  manifest.set_config(cfg);
  manifest.add_input("timeline", timeline_path);
  manifest.add_input("intervals", intervals_path);
  for (const auto& t : o.telemetry) {
    if (!fs::is_regular_file(t)) throw CommandError("cannot open telemetry '" + t + "'");
    manifest.add_input("telemetry", t);
  }
  if (!o.catalog.empty()) manifest.add_input("catalog", o.catalog);
  if (!o.truth.empty()) {
    if (!fs::is_regular_file(o.truth)) throw CommandError("cannot open truth file '" + o.truth + "'");
    manifest.add_input("truth", o.truth);
  }

  const auto catalog = load_catalog(o.catalog);
  std::vector<StateTimeline> timelines;
  std::vector<ExecIdleInterval> intervals;
  try {
    std::ifstream tin(timeline_path), iin(intervals_path);
    timelines = parse_timelines(tin);
    intervals = parse_intervals(iin);
  } catch (const std::exception& e) {
    throw CommandError(std::string("analysis outputs: ") + e.what());
  }
  std::vector<IngestSummary> ingest;
  const auto samples = load_telemetry(o.telemetry, catalog, ingest);

  // Rebuild each analysed stream from the timeline's timestamps.
  std::map<std::tuple<std::string, std::string, std::int64_t>, const TelemetrySample*> index;
  for (const auto& s : samples) index[{s.hostname, s.gpu_id, s.timestamp}] = &s;
  std::map<StreamKey, std::vector<TelemetrySample>> streams;
  for (const auto& tl : timelines) {
    auto& stream = streams[tl.key];
    for (const auto& e : tl.entries) {
      const auto it = index.find({tl.key.hostname, tl.key.gpu_id, e.timestamp});
      if (it == index.end()) {
        throw CommandError("telemetry lacks sample " + tl.key.hostname + ":" + tl.key.gpu_id + " at " +
                           std::to_string(e.timestamp) + " referenced by the analysis timeline");
      }
      stream.push_back(*it->second);
    }
  }

  ClusterParams params;
  params.min_cluster_size = o.min_cluster_size;
  params.radius = o.radius;
  const auto r = analyze_preidle(intervals, timelines, streams, params, {o.dominance_margin, o.cpu_elevated}, o.window);
  if (!r.clustering.warning.empty()) err << "warning: " << r.clustering.warning << '\n';
  const bool all_noise = std::all_of(r.clustering.assignment.begin(), r.clustering.assignment.end(),
                                     [](int a) { return a == kNoise; });
  if (all_noise) err << "warning: no window joined a cluster; share table is empty\n";

  const fs::path dir(o.out);
  prepare_out_dir(dir);
  {
    auto f = open_out(dir, "windows.csv");
    write_windows(f, r);
  }
  {
    auto f = open_out(dir, "clusters.csv");
    write_clusters(f, r);
  }
  {
    auto f = open_out(dir, "shares.csv");
    write_shares(f, r);
  }
  std::optional<double> accuracy;
  if (!o.truth.empty()) {
    std::ifstream tin(o.truth);
    const auto truth = parse_fingerprint_truth(tin);
    accuracy = label_accuracy(r, truth);
    auto f = open_out(dir, "accuracy.csv");
    f << "truth_windows,accuracy\n" << truth.size() << ',' << records::format_double(*accuracy) << '\n';
  }

  std::ostringstream table;
  table << "windows " << r.extraction.windows.size() << ", skipped intervals " << r.extraction.skipped
        << ", clusters " << r.clusters.size() << ", radius " << records::format_fixed(r.clustering.radius, 4) << "\n\n";
  if (!all_noise) {
    for (const auto& [label, share] : r.shares) {
      table << std::left << std::setw(18) << to_string(label) << std::right << std::setw(10) << pct(share) << '\n';
    }
  }
  if (accuracy) table << "\nlabel accuracy against truth: " << pct(*accuracy) << '\n';
  {
    auto f = open_out(dir, "summary.txt");
    f << table.str();
  }
  out << table.str();
  manifest.write(dir);
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::string trace;
  std::string config;
  std::string catalog;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void cmd_simulate(const SimulateOptions& o, const std::vector<std::string>& args, std::ostream& out,
                  std::ostream& err)
{
  const auto doc = read_json_file(o.config);
  SimConfig cfg;
  try {
    cfg = parse_sim_config(doc);
  } catch (const SimConfigError& e) {
    throw CommandError(e.what());
  } catch (const std::invalid_argument& e) {
    throw CommandError(e.what());
  }
  if (o.seed) cfg.seed = *o.seed;
  const auto catalog = load_catalog(o.catalog);

  RunManifest manifest("simulate", manifest_args(args));
  manifest.set_seed(cfg.seed);
  manifest.set_config(sim_config_json(cfg));
  if (!fs::is_regular_file(o.trace)) throw CommandError("cannot open trace '" + o.trace + "'");
  manifest.add_input("trace", o.trace);
  manifest.add_input("config", o.config);
  if (!o.catalog.empty()) manifest.add_input("catalog", o.catalog);

  TraceParseResult parsed;
  try {
    parsed = parse_trace_file(o.trace, cfg.duration);
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }
  if (parsed.rejected > 0) err << "warning: " << parsed.rejected << " malformed trace lines skipped\n";
  if (parsed.beyond_horizon > 0) err << "note: " << parsed.beyond_horizon << " requests beyond the replay horizon\n";
  auto requests = parsed.requests;
  if (cfg.thin) requests = thin_trace(requests, cfg.thin->keep_probability, cfg.thin->seed);

  const auto pool = cfg.pool(catalog);
  std::vector<std::string> names;
  std::vector<SimResult> results;
  try {
    for (const auto& s : cfg.scenarios) {
      names.push_back(s.name);
      results.push_back(run_simulation(requests, pool, s.policy, s.controller, cfg.rates, cfg.duration, cfg.seed));
    }
  } catch (const SimConfigError& e) {
    throw CommandError(e.what());
  } catch (const std::invalid_argument& e) {
    throw CommandError(e.what());
  }

  const fs::path dir(o.out);
  prepare_out_dir(dir);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    {
      auto f = open_out(dir, "requests_" + names[i] + ".csv");
      f << "id,arrival_s,gpu,start_s,completion_s,latency_s,completed\n";
      for (const auto& q : r.requests) {
        f << q.id << ',' << records::format_double(q.arrival) << ',' << q.gpu << ',';
        if (q.completed) {
          f << records::format_double(q.start) << ',' << records::format_double(q.completion) << ','
            << records::format_double(q.latency) << ",1\n";
        } else {
          f << ",,,0\n";
        }
      }
    }
    {
      auto f = open_out(dir, "gpus_" + names[i] + ".csv");
      f << "gpu,deep_idle_s,exec_idle_s,active_s,transition_s,busy_s,energy_j,served\n";
      for (std::size_t g = 0; g < r.gpus.size(); ++g) {
        const auto& go = r.gpus[g];
        f << g;
        for (auto st : kSimStates) f << ',' << records::format_double(go.occupancy(st));
        f << ',' << records::format_double(static_cast<double>(go.busy_us) / 1e6) << ','
          << records::format_double(go.energy) << ',' << go.served << '\n';
      }
    }
    {
      auto f = open_out(dir, "power_" + names[i] + ".csv");
      f << "gpu,state,power_w,dwell_s\n";
      for (std::size_t g = 0; g < r.gpus.size(); ++g) {
        for (const auto& b : r.gpus[g].buckets) {
          f << g << ',' << to_string(b.state) << ',' << records::format_double(b.power) << ','
            << records::format_double(static_cast<double>(b.dwell_us) / 1e6) << '\n';
        }
      }
    }
    {
      auto f = open_out(dir, "actions_" + names[i] + ".csv");
      f << "gpu,time_s,action,setting\n";
      for (const auto& a : r.actions) {
        f << a.gpu << ',' << records::format_double(a.time) << ',' << to_string(a.action) << ',' << to_string(a.setting)
          << '\n';
      }
    }
  }
  const auto rows = compare_results(names, results);
  {
    auto f = open_out(dir, "comparison.csv");
    f << "config,energy_j,average_power_w,p50_s,p95_s,p99_s,busy_fraction,unfinished,energy_ratio,p95_ratio,"
         "busy_ratio\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& row = rows[i];
      const auto& r = results[i];
      f << row.name << ',' << records::format_double(r.total_energy) << ',' << records::format_double(r.average_power)
        << ',' << records::format_double(r.p50_latency) << ',' << records::format_double(r.p95_latency) << ','
        << records::format_double(r.p99_latency) << ',' << records::format_double(r.busy_fraction) << ','
        << r.unfinished << ',' << records::format_double(row.energy_ratio) << ','
        << records::format_double(row.p95_ratio) << ',' << records::format_double(row.busy_ratio) << '\n';
    }
  }

  std::ostringstream table;
  table << "requests " << requests.size() << ", pool " << cfg.pool_size << " x " << cfg.gpu_name << ", "
        << cfg.duration << " s\n\n";
  table << std::left << std::setw(16) << "config" << std::right << std::setw(12) << "avg_W" << std::setw(10)
        << "p95_s" << std::setw(10) << "busy" << std::setw(10) << "E/E0" << std::setw(10) << "p95/p95_0" << '\n';
  for (const auto& row : rows) {
    table << std::left << std::setw(16) << row.name << std::right << std::fixed << std::setprecision(2)
          << std::setw(12) << row.average_power << std::setprecision(3) << std::setw(10) << row.p95_latency
          << std::setw(10) << row.busy_fraction << std::setw(10) << row.energy_ratio << std::setw(10)
          << row.p95_ratio << '\n';
  }
  {
    auto f = open_out(dir, "summary.txt");
    f << table.str();
  }
  out << table.str();
  manifest.write(dir);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Execution-idle GPU telemetry analysis and serving replay"};
  app.require_subcommand(1);
  app.set_version_flag("--version", RunManifest::kVersion);

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Synthesize telemetry or a request trace from a scenario file");
  g->add_option("-s,--scenario", gen.scenario, "Scenario JSON")->required();
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("-o,--out", gen.out, "Output directory")->required();

  AnalyzeOptions an;
  auto* a = app.add_subcommand("analyze", "Classify telemetry and account execution-idle time and energy");
  a->add_option("-t,--telemetry", an.telemetry, "Telemetry file(s)")->required();
  a->add_option("-j,--jobs", an.jobs, "Job log (default: derived from telemetry job ids)");
  a->add_option("--catalog", an.catalog, "GPU catalog JSON merged onto the built-in models");
  a->add_option("-c,--config", an.config, "Analysis settings JSON");
  a->add_option("-o,--out", an.out, "Output directory")->required();
  a->add_option("--activity-threshold", an.activity_threshold, "Activity threshold as a fraction (0.05 = 5%)");
  a->add_option("--comm-threshold", an.comm_threshold, "Communication threshold, MB/s");
  a->add_option("--min-interval", an.min_interval, "Minimum execution-idle interval, s");
  a->add_option("--max-sample-gap", an.max_sample_gap, "Largest timestamp step inside one interval, s");
  a->add_option("--residency-margin", an.residency_margin, "Residency fallback margin above deep idle, W");
  a->add_option("--job-cutoff", an.job_cutoff, "Minimum job length, s");
  a->add_option("--sweep-cutoffs", an.sweep_cutoffs, "Robustness sweep job cutoffs, s")->delimiter(',');
  a->add_option("--sweep-min-intervals", an.sweep_min_intervals, "Robustness sweep minimum intervals, s")
      ->delimiter(',');

  PreidleOptions pre;
  auto* p = app.add_subcommand("preidle", "Cluster and label the windows preceding execution-idle intervals");
  p->add_option("-a,--analysis", pre.analysis, "Output directory of an analyze run")->required();
  p->add_option("-t,--telemetry", pre.telemetry, "Telemetry file(s) (default: those recorded by analyze)");
  p->add_option("--catalog", pre.catalog, "GPU catalog JSON");
  p->add_option("--truth", pre.truth, "Fingerprint truth file for an accuracy report");
  p->add_option("-o,--out", pre.out, "Output directory")->required();
  p->add_option("--min-cluster-size", pre.min_cluster_size, "Neighbourhood size that makes a core point");
  p->add_option("--radius", pre.radius, "Neighbourhood radius in standardized units (default: k-distance)");
  p->add_option("--window", pre.window, "Window length, s");
  p->add_option("--dominance-margin", pre.dominance_margin, "z lead required of the dominant signal group");
  p->add_option("--cpu-elevated", pre.cpu_elevated, "z at which host CPU counts as elevated");

  SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "Replay a request trace under each configured policy");
  s->add_option("--trace", sim.trace, "Trace file")->required();
  s->add_option("-c,--config", sim.config, "Simulation config JSON")->required();
  s->add_option("--catalog", sim.catalog, "GPU catalog JSON");
  s->add_option("--seed", sim.seed, "Override the config seed");
  s->add_option("-o,--out", sim.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*g) cmd_generate(gen, args, out);
    if (*a) cmd_analyze(an, args, out, err);
    if (*p) cmd_preidle(pre, args, out, err);
    if (*s) cmd_simulate(sim, args, out, err);
  } catch (const CommandError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace xidle::cli
