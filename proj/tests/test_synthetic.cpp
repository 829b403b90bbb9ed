#include <doctest.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "xidle/pipeline.hpp"
#include "xidle/synthetic.hpp"

using namespace xidle;

namespace {

Scenario load(const std::string& name)
{
  std::ifstream in(std::string(XIDLE_FIXTURE_DIR) + "/" + name);
  REQUIRE(in);
  return parse_scenario(nlohmann::json::parse(in));
}

std::string telemetry_text(const GeneratedTelemetry& g)
{
  std::ostringstream os;
  write_telemetry(os, g.samples);
  write_jobs(os, g.jobs);
  write_ground_truth(os, g);
  return os.str();
}

}  // namespace

TEST_CASE("single-job scenario yields the scheduled phases")
{
  const auto g = generate_synthetic(load("single_job.json"), 7);
  REQUIRE_EQ(g.samples.size(), 210u);
  for (std::size_t i = 0; i < 210; ++i) {
    const char* phase = i < 60 ? "deep" : i < 180 ? "active" : "low";
    const char* state = i < 60 ? "deep-idle" : i < 180 ? "active" : "exec-idle";
    CHECK_EQ(g.phases[i], phase);
    CHECK_EQ(g.labels[i], state);
    CHECK(validate(g.samples[i]).empty());
  }
  REQUIRE_EQ(g.jobs.size(), 1u);
  CHECK_EQ(g.jobs[0].end - g.jobs[0].start + 1, 210);
  CHECK_EQ(g.report.deep_seconds, 60);
  CHECK_EQ(g.report.exec_idle_seconds, 30);
  CHECK_EQ(g.report.active_seconds, 120);
}

TEST_CASE("generation is deterministic per seed")
{
  const auto sc = load("single_job.json");
  CHECK_EQ(telemetry_text(generate_synthetic(sc, 7)), telemetry_text(generate_synthetic(sc, 7)));
  CHECK_NE(telemetry_text(generate_synthetic(sc, 7)), telemetry_text(generate_synthetic(sc, 8)));
  Scenario mix;
  mix.kind = "cluster-mix";
  mix.params = {{"num_gpus", 2}, {"jobs_per_gpu", 1}};
  CHECK_EQ(telemetry_text(generate_synthetic(mix, 1)), telemetry_text(generate_synthetic(mix, 1)));
}

TEST_CASE("cluster-mix report states the designed fractions")
{
  const auto g = generate_synthetic(load("cluster_mix.json"), 1);
  CHECK(g.report.time_fraction * 100.0 == doctest::Approx(15.0).epsilon(0.001));
  CHECK(std::abs(g.report.energy_fraction - 0.10) < 0.005);
  CHECK_EQ(g.jobs.size(), 24u);
  for (const auto& j : g.jobs) CHECK_GE(j.length(), 7200);
}

TEST_CASE("generated telemetry always parses cleanly")
{
  for (const char* name : {"single_job.json", "cluster_mix.json", "preidle_corpus.json"}) {
    auto sc = load(name);
    if (sc.kind == "cluster-mix") sc.params["num_gpus"] = 3;
    if (sc.kind == "preidle-corpus") sc.params["windows"] = 80;
    const auto g = generate_synthetic(sc, 5);
    std::stringstream ss;
    write_telemetry(ss, g.samples);
    const auto parsed = parse_telemetry(ss, g.catalog);
    CHECK_EQ(parsed.malformed, 0u);
    CHECK_EQ(parsed.duplicates, 0u);
    CHECK_EQ(parsed.samples.size(), g.samples.size());
  }
}

TEST_CASE("overlapping jobs are rejected")
{
  auto sc = load("single_job.json");
  auto second = sc.jobs[0];
  second.job_id = "J2";
  second.start_offset = 100;
  sc.jobs.push_back(second);
  CHECK_THROWS_AS(generate_synthetic(sc, 1), ScenarioError);
}

TEST_CASE("invalid scenarios are rejected")
{
  CHECK_THROWS_AS(parse_scenario(nlohmann::json::parse(R"({"jobs": [{"job_id": "J"}]})")), ScenarioError);
  CHECK_THROWS_AS(parse_scenario(nlohmann::json::parse(
                      R"({"jobs": [{"job_id": "J", "phases": [{"class": "warm", "duration": 1, "power": 1}]}]})")),
                  ScenarioError);
  auto sc = load("single_job.json");
  sc.jobs[0].gpu = 3;
  CHECK_THROWS_AS(generate_synthetic(sc, 1), ScenarioError);
  sc = load("single_job.json");
  sc.jobs[0].phases.push_back({PhaseClass::deep, 10, 36.0, {}, std::nullopt});
  CHECK_THROWS_AS(generate_synthetic(sc, 1), ScenarioError);
  sc.emit_proc_resident = true;
  CHECK_NOTHROW(generate_synthetic(sc, 1));
  Scenario unknown;
  unknown.kind = "mystery";
  CHECK_THROWS_AS(generate_synthetic(unknown, 1), ScenarioError);
}

TEST_CASE("Poisson trace mean gap matches the rate")
{
  const auto t = generate_trace(load("poisson_trace.json"), 3);
  REQUIRE_GT(t.requests.size(), 100u);
  CHECK(std::abs(t.mean_gap - 5.0) / 5.0 < 0.10);
  for (std::size_t i = 0; i < t.requests.size(); ++i) {
    CHECK_LE(t.requests[i].arrival, 1800.0);
    CHECK_GE(t.requests[i].input_tokens, 200);
    CHECK_LE(t.requests[i].input_tokens, 1200);
    if (i > 0) CHECK_GE(t.requests[i].arrival, t.requests[i - 1].arrival);
  }
}

TEST_CASE("bursty trace median gap lies in the seconds range")
{
  const auto t = generate_trace(load("bursty_trace.json"), 11);
  CHECK_GE(t.median_gap, 4.0);
  CHECK_LE(t.median_gap, 8.0);
  CHECK_GT(t.mean_gap, t.median_gap);
}

TEST_CASE("pre-idle corpus injects the requested mixture")
{
  auto sc = load("preidle_corpus.json");
  sc.params["windows"] = 200;
  const auto g = generate_synthetic(sc, 2);
  REQUIRE_EQ(g.fingerprints.size(), 200u);
  std::map<FingerprintLabel, int> counts;
  for (const auto& f : g.fingerprints) ++counts[f.label];
  CHECK_EQ(counts[FingerprintLabel::pcie_heavy], 96);
  CHECK_EQ(counts[FingerprintLabel::nic_heavy], 34);
  CHECK_EQ(counts[FingerprintLabel::nvlink_heavy], 4);
  CHECK_EQ(counts[FingerprintLabel::compute_to_idle], 66);

  std::stringstream ss;
  write_fingerprint_truth(ss, g.fingerprints);
  const auto back = parse_fingerprint_truth(ss);
  REQUIRE_EQ(back.size(), g.fingerprints.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK_EQ(back[i].key, g.fingerprints[i].key);
    CHECK_EQ(back[i].interval_start, g.fingerprints[i].interval_start);
    CHECK_EQ(back[i].label, g.fingerprints[i].label);
  }
}

TEST_CASE("generator labels agree with a full analysis")
{
  auto sc = load("cluster_mix.json");
  sc.params["num_gpus"] = 3;
  const auto g = generate_synthetic(sc, 6);
  const auto r = analyze_dataset({g.samples, g.jobs, g.catalog}, {});
  CHECK(r.fractions.time_fraction == doctest::Approx(g.report.time_fraction).epsilon(1e-12));
  CHECK(r.fractions.energy_fraction == doctest::Approx(g.report.energy_fraction).epsilon(1e-12));
  CHECK(r.skipped_streams.empty());
}
