#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "xidle/pipeline.hpp"
#include "xidle/preidle.hpp"
#include "xidle/random.hpp"
#include "xidle/synthetic.hpp"

using namespace xidle;
using testutil::sample;

namespace {

const StreamKey kKey{"J", "h0", "0"};

struct Stream {
  std::vector<TelemetrySample> samples;
  std::vector<ClassifiedSample> classified;
};

/// Builds one stream from (class, count) segments starting at t0.
Stream build(std::int64_t t0, std::initializer_list<std::pair<SampleActivityClass, std::int64_t>> segments)
{
  Stream s;
  auto t = t0;
  for (const auto& [cls, n] : segments) {
    for (std::int64_t i = 0; i < n; ++i, ++t) {
      s.samples.push_back(sample(t, cls == SampleActivityClass::active ? 200.0 : 100.0));
      s.samples.back().signal(Signal::pcie_tx) = static_cast<double>(t);
      s.classified.push_back({t, cls, s.samples.back().power});
    }
  }
  return s;
}

WindowExtraction extract(const Stream& s)
{
  const auto d = detect_intervals(kKey, s.classified, {});
  return extract_windows(d.intervals, {d.timeline}, {{kKey, s.samples}});
}

FeatureVector point(double v)
{
  FeatureVector f;
  for (auto& x : f) x = v;
  return f;
}

std::vector<FeatureVector> two_blobs(Rng& rng, std::size_t per_blob)
{
  std::vector<FeatureVector> pts;
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const double centre = i % 2 == 0 ? 0.0 : 20.0;
    FeatureVector f;
    for (auto& x : f) x = rng.normal(centre, 0.3);
    pts.push_back(f);
  }
  return pts;
}

}  // namespace

TEST_CASE("window covers the last ten seconds of the preceding active run")
{
  using C = SampleActivityClass;
  const auto s = build(80, {{C::active, 20}, {C::low_activity_resident, 20}});
  const auto w = extract(s);
  REQUIRE_EQ(w.windows.size(), 1u);
  CHECK_EQ(w.skipped, 0u);
  const auto& win = w.windows[0];
  CHECK_EQ(win.interval_start, 100);
  REQUIRE_EQ(win.samples.size(), 10u);
  CHECK_EQ(win.samples.front().timestamp, 90);
  CHECK_EQ(win.samples.back().timestamp, 99);
}

TEST_CASE("window truncates at the start of the active run")
{
  using C = SampleActivityClass;
  const auto s = build(80, {{C::no_program, 17}, {C::active, 3}, {C::low_activity_resident, 20}});
  const auto w = extract(s);
  REQUIRE_EQ(w.windows.size(), 1u);
  REQUIRE_EQ(w.windows[0].samples.size(), 3u);
  CHECK_EQ(w.windows[0].samples.front().timestamp, 97);
}

TEST_CASE("interval at stream start is skipped")
{
  using C = SampleActivityClass;
  const auto s = build(0, {{C::low_activity_resident, 10}, {C::active, 5}, {C::low_activity_resident, 10}});
  const auto w = extract(s);
  CHECK_EQ(w.skipped, 1u);
  REQUIRE_EQ(w.windows.size(), 1u);
  CHECK_EQ(w.windows[0].interval_start, 15);
}

TEST_CASE("window bounds hold on generated telemetry")
{
  Scenario sc;
  sc.kind = "preidle-corpus";
  sc.params = {{"windows", 60}};
  const auto g = generate_synthetic(sc, 4);
  const auto r = analyze_dataset({g.samples, g.jobs, g.catalog}, {});
  std::vector<StateTimeline> tls;
  for (const auto& s : r.streams) tls.push_back(s.timeline);
  const auto ex = extract_windows(r.intervals, tls, attribute_samples(g.samples, g.jobs).streams);
  CHECK_EQ(ex.windows.size() + ex.skipped, r.intervals.size());
  for (const auto& w : ex.windows) {
    REQUIRE_FALSE(w.samples.empty());
    CHECK_LE(w.samples.size(), 10u);
    for (const auto& s : w.samples) {
      CHECK_LT(s.timestamp, w.interval_start);
      CHECK_GE(s.timestamp, w.interval_start - 10);
      CHECK_EQ(s.hostname, w.key.hostname);
      CHECK_EQ(s.gpu_id, w.key.gpu_id);
    }
  }
}

TEST_CASE("featurize aggregates each group")
{
  PreIdleWindow w{kKey, 100, {}};
  for (double v : {2000.0, 8000.0, 4000.0}) {
    auto s = sample(static_cast<std::int64_t>(w.samples.size()), 100);
    s.signal(Signal::pcie_tx) = v;
    s.signal(Signal::sm) = 0.0;
    w.samples.push_back(s);
  }
  const auto f = featurize(w);
  CHECK(*f.raw[mean_index(SignalGroup::pcie)] == doctest::Approx(4666.7).epsilon(1e-5));
  CHECK_EQ(*f.raw[max_index(SignalGroup::pcie)], 8000.0);
  CHECK_EQ(*f.raw[mean_index(SignalGroup::sm)], 0.0);
  CHECK_FALSE(f.raw[mean_index(SignalGroup::nvlink)].has_value());
  CHECK_FALSE(f.raw[max_index(SignalGroup::nvlink)].has_value());
  for (std::size_t k = 0; k < kFeatureCount; k += 2) {
    if (f.raw[k]) CHECK_GE(*f.raw[k + 1], *f.raw[k]);
  }
  CHECK_THROWS_AS(featurize(PreIdleWindow{}), std::invalid_argument);
}

TEST_CASE("featurize of an all-zero window")
{
  PreIdleWindow w{kKey, 10, {}};
  for (int t = 0; t < 5; ++t) {
    auto s = sample(t, 100);
    for (auto sig : {Signal::sm, Signal::dram, Signal::pcie_tx, Signal::pcie_rx, Signal::nic_tx, Signal::nic_rx,
                     Signal::nvlink_tx, Signal::nvlink_rx, Signal::cpu_util}) {
      s.signal(sig) = 0.0;
    }
    w.samples.push_back(s);
  }
  for (const auto& v : featurize(w).raw) {
    REQUIRE(v.has_value());
    CHECK_EQ(*v, 0.0);
  }
}

TEST_CASE("distance ignores absent features")
{
  auto a = point(1.0);
  auto b = point(1.0);
  b[0] = std::nullopt;
  CHECK_EQ(fingerprint_distance(a, b), 0.0);
  b[1] = 4.0;
  CHECK(fingerprint_distance(a, b) == doctest::Approx(3.0 * std::sqrt(12.0 / 11.0)));
  FeatureVector empty;
  CHECK(std::isinf(fingerprint_distance(a, empty)));
}

TEST_CASE("standardize gives zero mean and unit spread")
{
  Rng rng(3);
  std::vector<Fingerprint> fps(50);
  for (auto& f : fps) {
    for (std::size_t k = 0; k < kFeatureCount; ++k) f.raw[k] = rng.uniform(0, 100);
    f.raw[4] = std::nullopt;
  }
  standardize(fps);
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    if (k == 4) {
      for (const auto& f : fps) CHECK_FALSE(f.z[k].has_value());
      continue;
    }
    double sum = 0.0, ss = 0.0;
    for (const auto& f : fps) sum += *f.z[k];
    for (const auto& f : fps) ss += *f.z[k] * *f.z[k];
    CHECK(std::abs(sum / 50.0) < 1e-9);
    CHECK(ss / 50.0 == doctest::Approx(1.0));
  }
}

TEST_CASE("two separated blobs give two clusters and no noise")
{
  Rng rng(11);
  const auto pts = two_blobs(rng, 50);
  const auto c = cluster_windows(pts, {});
  CHECK_EQ(c.cluster_count, 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK_NE(c.assignment[i], kNoise);
    CHECK_EQ(c.assignment[i], c.assignment[i % 2]);
  }
  CHECK_NE(c.assignment[0], c.assignment[1]);
  CHECK_LT(c.radius, 20.0);
}

TEST_CASE("sparse scatter is all noise")
{
  Rng rng(12);
  std::vector<FeatureVector> pts;
  for (int i = 0; i < 40; ++i) {
    FeatureVector f;
    for (auto& x : f) x = rng.uniform(-1000.0, 1000.0);
    pts.push_back(f);
  }
  ClusterParams p;
  p.radius = 1.0;
  const auto c = cluster_windows(pts, p);
  CHECK_EQ(c.cluster_count, 0);
  for (auto a : c.assignment) CHECK_EQ(a, kNoise);
}

TEST_CASE("too few points is all noise with a warning")
{
  const auto c = cluster_windows({point(0), point(0)}, {});
  CHECK_EQ(c.cluster_count, 0);
  CHECK_FALSE(c.warning.empty());
}

TEST_CASE("duplicating every point doubles membership")
{
  Rng rng(13);
  auto pts = two_blobs(rng, 30);
  ClusterParams p;
  p.radius = 3.0;
  const auto once = cluster_windows(pts, p);
  const auto n = pts.size();
  pts.insert(pts.end(), pts.begin(), pts.end());
  const auto twice = cluster_windows(pts, p);
  CHECK_EQ(twice.cluster_count, once.cluster_count);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK_EQ(twice.assignment[i], once.assignment[i]);
    CHECK_EQ(twice.assignment[i + n], once.assignment[i]);
  }
}

TEST_CASE("clustering is deterministic")
{
  Rng rng(14);
  std::vector<FeatureVector> pts;
  for (int i = 0; i < 120; ++i) {
    FeatureVector f;
    for (auto& x : f) x = rng.normal(static_cast<double>(i % 3) * 2.0, 1.0);
    if (i % 7 == 0) f[5] = std::nullopt;
    pts.push_back(f);
  }
  const auto a = cluster_windows(pts, {});
  const auto b = cluster_windows(pts, {});
  CHECK(a.assignment == b.assignment);
  CHECK_EQ(a.radius, b.radius);
}

TEST_CASE("label rules")
{
  const auto with = [](std::initializer_list<std::pair<SignalGroup, double>> vals) {
    FeatureVector z;
    for (auto g : kSignalGroups) z[max_index(g)] = 0.0;
    for (const auto& [g, v] : vals) z[max_index(g)] = v;
    return z;
  };
  CHECK_EQ(label_centroid(with({{SignalGroup::pcie, 2.5}, {SignalGroup::cpu, 1.2}, {SignalGroup::nic, 0.4}})),
           FingerprintLabel::pcie_heavy);
  CHECK_EQ(label_centroid(with({{SignalGroup::sm, 2.0}, {SignalGroup::dram, 1.5}})), FingerprintLabel::compute_to_idle);
  CHECK_EQ(label_centroid(with({{SignalGroup::nvlink, 2.0}})), FingerprintLabel::nvlink_heavy);
  CHECK_EQ(label_centroid(with({{SignalGroup::nic, 1.8}, {SignalGroup::cpu, 0.9}})), FingerprintLabel::nic_heavy);
  // pcie leads without cpu load
  CHECK_EQ(label_centroid(with({{SignalGroup::pcie, 2.5}, {SignalGroup::cpu, 0.1}})), FingerprintLabel::other);
  // no group leads by the margin
  CHECK_EQ(label_centroid(with({{SignalGroup::pcie, 2.0}, {SignalGroup::nic, 1.8}, {SignalGroup::cpu, 2.0}})),
           FingerprintLabel::other);
  CHECK_EQ(label_centroid(FeatureVector{}), FingerprintLabel::other);
  LabelRules loose{0.1, 0.5};
  CHECK_EQ(label_centroid(with({{SignalGroup::pcie, 2.0}, {SignalGroup::nic, 1.8}, {SignalGroup::cpu, 2.0}}), loose),
           FingerprintLabel::pcie_heavy);
}

TEST_CASE("shares sum to one over clustered windows")
{
  Rng rng(15);
  const auto pts = two_blobs(rng, 20);
  const auto c = cluster_windows(pts, {});
  const auto labeled = label_clusters(pts, c);
  double sum = 0.0;
  for (const auto& [l, s] : label_shares(labeled)) sum += s;
  CHECK(std::abs(sum - 1.0) < 1e-9);
  for (const auto& lc : labeled) CHECK_FALSE(lc.members.empty());
  for (const auto& [l, s] : label_shares({})) CHECK_EQ(s, 0.0);
}

TEST_CASE("injected corpus labels are recovered")
{
  Scenario sc;
  sc.kind = "preidle-corpus";
  sc.params = {{"windows", 300}};
  const auto g = generate_synthetic(sc, 8);
  const auto r = analyze_dataset({g.samples, g.jobs, g.catalog}, {});
  std::vector<StateTimeline> tls;
  for (const auto& s : r.streams) tls.push_back(s.timeline);
  const auto streams = attribute_samples(g.samples, g.jobs).streams;
  const auto res = analyze_preidle(r.intervals, tls, streams);
  CHECK_EQ(res.extraction.windows.size(), 300u);
  CHECK_GE(label_accuracy(res, g.fingerprints), 0.95);
  const auto again = analyze_preidle(r.intervals, tls, streams);
  CHECK(again.clustering.assignment == res.clustering.assignment);
}
