#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "bundle.hpp"
#include "commands.hpp"
#include "helpers.hpp"
#include "xidle/records.hpp"

using testutil::slurp;
using testutil::TempDir;

namespace {

const std::string kFixtures = XIDLE_FIXTURE_DIR;

struct Run {
  int status;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args)
{
  std::ostringstream out, err;
  const int status = xidle::cli::run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

std::string fixture(const std::string& name) { return kFixtures + "/" + name; }

std::vector<std::string> lines(const std::string& text)
{
  std::vector<std::string> v;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

/// Value of a named column in the first data row of a line-record file.
std::string field(const std::filesystem::path& file, const std::string& column)
{
  const auto ls = lines(slurp(file));
  REQUIRE_GE(ls.size(), 2u);
  const xidle::records::Header h(ls[0]);
  return std::string(xidle::records::split(ls[1])[h.require(column)]);
}

}  // namespace

TEST_CASE("generate writes telemetry, jobs, ground truth and a manifest")
{
  TempDir d("gen");
  const auto r = cli({"generate", "--scenario", fixture("single_job.json"), "--seed", "7", "--out", d.path().string()});
  REQUIRE_EQ(r.status, 0);
  CHECK_EQ(lines(slurp(d / "telemetry.csv")).size(), 211u);
  CHECK_EQ(lines(slurp(d / "ground_truth.csv")).size(), 211u);
  CHECK_EQ(lines(slurp(d / "jobs.csv")).size(), 2u);
  const auto m = nlohmann::json::parse(slurp(d / "manifest.json"));
  CHECK_EQ(m.at("command"), "generate");
  CHECK_EQ(m.at("seed"), 7);
  CHECK(m.contains("config_sha256"));
  CHECK(m.contains("wall_clock"));
  bool listed = false;
  for (const auto& o : m.at("outputs")) listed |= o.at("file") == "telemetry.csv";
  CHECK(listed);
}

TEST_CASE("generate is reproducible for a fixed seed")
{
  TempDir a("gen-a"), b("gen-b"), c("gen-c");
  for (const auto* d : {&a, &b}) {
    REQUIRE_EQ(cli({"generate", "-s", fixture("single_job.json"), "--seed", "7", "-o", d->path().string()}).status, 0);
  }
  REQUIRE_EQ(cli({"generate", "-s", fixture("single_job.json"), "--seed", "8", "-o", c.path().string()}).status, 0);
  CHECK_EQ(testutil::bundle_difference(a.path(), b.path()), "");
  CHECK_NE(testutil::bundle_difference(a.path(), c.path()), "");
}

TEST_CASE("generate writes a trace for trace scenarios")
{
  TempDir d("trace");
  REQUIRE_EQ(cli({"generate", "-s", fixture("poisson_trace.json"), "--seed", "3", "-o", d.path().string()}).status, 0);
  const auto report = nlohmann::json::parse(slurp(d / "generator_report.json"));
  CHECK(std::abs(report.at("mean_gap_s").get<double>() - 5.0) < 0.5);
  CHECK_FALSE(std::filesystem::exists(d / "telemetry.csv"));
  CHECK(std::filesystem::exists(d / "trace.csv"));
}

TEST_CASE("analyze reports the single-job fractions")
{
  TempDir g("an-gen"), a("an-out");
  REQUIRE_EQ(cli({"generate", "-s", fixture("single_job.json"), "--seed", "7", "-o", g.path().string()}).status, 0);
  const auto r = cli({"analyze", "-t", (g / "telemetry.csv").string(), "-j", (g / "jobs.csv").string(),
                      "--job-cutoff", "0", "-o", a.path().string()});
  REQUIRE_EQ(r.status, 0);
  CHECK_EQ(std::stod(field(a / "fractions.csv", "time_fraction")), 0.2);
  CHECK_EQ(field(a / "fractions.csv", "exec_idle_s"), "30");
  for (const char* f : {"breakdown.csv", "per_job_fractions.csv", "cdf_time.csv", "cdf_energy.csv", "robustness.csv",
                        "durations.csv", "durations_cdf.csv", "tdp.csv", "timeline.csv", "intervals.csv",
                        "summary.txt", "ingest.csv", "manifest.json"}) {
    CHECK_MESSAGE(std::filesystem::exists(a / f), f);
  }
  CHECK_NE(r.out.find("exec-idle"), std::string::npos);
}

TEST_CASE("analyze applies the default two-hour cutoff")
{
  TempDir g("cut-gen"), a("cut-out");
  REQUIRE_EQ(cli({"generate", "-s", fixture("single_job.json"), "-o", g.path().string()}).status, 0);
  REQUIRE_EQ(cli({"analyze", "-t", (g / "telemetry.csv").string(), "-o", a.path().string()}).status, 0);
  CHECK_EQ(field(a / "fractions.csv", "kept_jobs"), "0");
  CHECK_EQ(std::stod(field(a / "fractions.csv", "time_fraction")), 0.0);
}

TEST_CASE("analyze accepts an empty dataset")
{
  TempDir d("empty");
  {
    std::ofstream(d / "blank.csv");
  }
  const auto r = cli({"analyze", "-t", (d / "blank.csv").string(), "-o", (d / "out").string()});
  REQUIRE_EQ(r.status, 0);
  CHECK_EQ(field(d / "out" / "fractions.csv", "time_fraction"), "0");
  CHECK_EQ(lines(slurp(d / "out" / "intervals.csv")).size(), 1u);
}

TEST_CASE("analyze fails on unreadable input and bad options")
{
  TempDir d("bad");
  auto r = cli({"analyze", "-t", (d / "missing.csv").string(), "-o", (d / "out").string()});
  CHECK_NE(r.status, 0);
  CHECK_FALSE(r.err.empty());
  CHECK_NE(cli({"analyze", "-o", (d / "out").string()}).status, 0);
  CHECK_NE(cli({}).status, 0);
  CHECK_NE(cli({"frobnicate"}).status, 0);
}

TEST_CASE("analyze surfaces overlapping jobs as an error")
{
  TempDir g("ov-gen");
  REQUIRE_EQ(cli({"generate", "-s", fixture("single_job.json"), "-o", g.path().string()}).status, 0);
  auto jobs = slurp(g / "jobs.csv");
  const auto ls = lines(jobs);
  std::ofstream(g / "jobs2.csv") << jobs << "J2" << ls[1].substr(ls[1].find(',')) << '\n';
  const auto r = cli({"analyze", "-t", (g / "telemetry.csv").string(), "-j", (g / "jobs2.csv").string(), "-o",
                      (g / "out").string()});
  CHECK_EQ(r.status, 1);
  CHECK_NE(r.err.find("J2"), std::string::npos);
}

TEST_CASE("preidle labels the injected corpus")
{
  TempDir g("pre-gen"), a("pre-an"), p("pre-out"), q("pre-out2");
  std::ofstream(g / "scenario.json") << R"({"kind": "preidle-corpus", "params": {"windows": 150}})";
  REQUIRE_EQ(cli({"generate", "-s", (g / "scenario.json").string(), "--seed", "2", "-o", (g / "data").string()}).status, 0);
  REQUIRE_EQ(cli({"analyze", "-t", (g / "data" / "telemetry.csv").string(), "-j", (g / "data" / "jobs.csv").string(),
                  "-o", a.path().string()})
                 .status,
             0);
  for (const auto* d : {&p, &q}) {
    const auto r = cli({"preidle", "-a", a.path().string(), "--truth", (g / "data" / "fingerprint_truth.csv").string(),
                        "-o", d->path().string()});
    REQUIRE_EQ(r.status, 0);
  }
  CHECK_GE(std::stod(field(p / "accuracy.csv", "accuracy")), 0.95);
  CHECK_EQ(lines(slurp(p / "windows.csv")).size(), 151u);
  CHECK_EQ(testutil::bundle_difference(p.path(), q.path()), "");
}

TEST_CASE("preidle with every window as noise writes an empty share table")
{
  TempDir g("noise-gen"), a("noise-an"), p("noise-out");
  REQUIRE_EQ(cli({"generate", "-s", fixture("single_job.json"), "-o", g.path().string()}).status, 0);
  REQUIRE_EQ(cli({"analyze", "-t", (g / "telemetry.csv").string(), "--job-cutoff", "0", "-o", a.path().string()}).status,
             0);
  const auto r = cli({"preidle", "-a", a.path().string(), "-o", p.path().string()});
  REQUIRE_EQ(r.status, 0);
  CHECK_FALSE(r.err.empty());
  const auto ls = lines(slurp(p / "shares.csv"));
  REQUIRE_FALSE(ls.empty());
  CHECK_EQ(ls[0], "label,share");
  for (std::size_t i = 1; i < ls.size(); ++i) CHECK_EQ(ls[i][0], '#');
}

TEST_CASE("preidle fails without analysis outputs")
{
  TempDir d("pre-missing");
  const auto r = cli({"preidle", "-a", (d / "nothing").string(), "-o", (d / "out").string()});
  CHECK_EQ(r.status, 1);
}

TEST_CASE("simulate with one config gives unit ratios")
{
  TempDir d("sim1");
  std::ofstream(d / "config.json") << R"({"duration": 600, "configs": [{"name": "only"}]})";
  REQUIRE_EQ(cli({"generate", "-s", fixture("poisson_trace.json"), "--seed", "3", "-o", (d / "t").string()}).status, 0);
  const auto r = cli({"simulate", "--trace", (d / "t" / "trace.csv").string(), "-c", (d / "config.json").string(), "-o",
                      (d / "out").string()});
  REQUIRE_EQ(r.status, 0);
  const auto ls = lines(slurp(d / "out" / "comparison.csv"));
  REQUIRE_EQ(ls.size(), 2u);
  CHECK_EQ(field(d / "out" / "comparison.csv", "energy_ratio"), "1");
  CHECK_EQ(field(d / "out" / "comparison.csv", "p95_ratio"), "1");
  for (const char* f : {"requests_only.csv", "gpus_only.csv", "power_only.csv", "actions_only.csv", "summary.txt"}) {
    CHECK_MESSAGE(std::filesystem::exists(d / "out" / f), f);
  }
}

TEST_CASE("simulate output does not depend on the seed")
{
  TempDir d("simseed");
  REQUIRE_EQ(cli({"generate", "-s", fixture("bursty_trace.json"), "--seed", "11", "-o", (d / "t").string()}).status, 0);
  for (const char* seed : {"1", "2"}) {
    REQUIRE_EQ(cli({"simulate", "--trace", (d / "t" / "trace.csv").string(), "-c", fixture("sim_controller.json"),
                    "--seed", seed, "-o", (d / seed).string()})
                   .status,
               0);
  }
  const auto a = testutil::bundle(d / "1"), b = testutil::bundle(d / "2");
  for (const auto& [name, text] : a) {
    if (name != "manifest.json") CHECK_MESSAGE(text == b.at(name), name);
  }
}

TEST_CASE("simulate rejects bad configs")
{
  TempDir d("simbad");
  REQUIRE_EQ(cli({"generate", "-s", fixture("poisson_trace.json"), "-o", (d / "t").string()}).status, 0);
  const auto trace = (d / "t" / "trace.csv").string();
  std::ofstream(d / "a.json") << R"({"configs": []})";
  std::ofstream(d / "b.json") << R"({"configs": [{"name": "x", "policy": "random"}]})";
  std::ofstream(d / "c.json") << R"({"pool": {"size": 2}, "configs": [{"name": "x", "policy": "consolidate", "active_gpus": 3}]})";
  std::ofstream(d / "d.json") << R"({"configs": [{"name": "bad name"}]})";
  std::ofstream(d / "e.json") << "not json";
  for (const char* c : {"a.json", "b.json", "c.json", "d.json", "e.json"}) {
    const auto r = cli({"simulate", "--trace", trace, "-c", (d / c).string(), "-o", (d / "out").string()});
    CHECK_MESSAGE(r.status == 1, c);
    CHECK_MESSAGE(!r.err.empty(), c);
  }
}

TEST_CASE("generate rejects bad scenarios")
{
  TempDir d("genbad");
  std::ofstream(d / "s.json") << R"({"kind": "cluster-mix", "params": {"num_gpus": 0}})";
  std::ofstream(d / "t.json") << R"({"gpus": [], "jobs": [{"job_id": "J", "phases": [{"class": "low", "duration": 1, "power": 1}]}]})";
  CHECK_EQ(cli({"generate", "-s", (d / "s.json").string(), "-o", (d / "o").string()}).status, 1);
  CHECK_EQ(cli({"generate", "-s", (d / "t.json").string(), "-o", (d / "o").string()}).status, 1);
  CHECK_EQ(cli({"generate", "-s", (d / "missing.json").string(), "-o", (d / "o").string()}).status, 1);
}
