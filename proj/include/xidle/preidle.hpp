#pragma once

// What happens right before a GPU goes execution-idle: extract the short
// active stretch preceding each interval, reduce it to per-group signal
// aggregates, cluster the standardized fingerprints by density and name each
// cluster after its dominant signal group.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "xidle/classifier.hpp"
#include "xidle/records.hpp"
#include "xidle/stats.hpp"
#include "xidle/synthetic.hpp"
#include "xidle/telemetry.hpp"

namespace xidle {

inline constexpr std::int64_t kPreIdleWindow = 10;  ///< s

struct PreIdleWindow {
  StreamKey key;
  std::int64_t interval_start = 0;
  std::vector<TelemetrySample> samples;  ///< ascending timestamps, all before interval_start
};

struct WindowExtraction {
  std::vector<PreIdleWindow> windows;
  std::size_t skipped = 0;  ///< intervals with no active sample right before them
};

/// One window per interval: the trailing part (at most window_len seconds) of
/// the contiguous active run that ends right before the interval.
inline WindowExtraction extract_windows(const std::vector<ExecIdleInterval>& intervals,
                                        const std::vector<StateTimeline>& timelines,
                                        const std::map<StreamKey, std::vector<TelemetrySample>>& streams,
                                        std::int64_t window_len = kPreIdleWindow)
{
  if (window_len < 1) throw std::invalid_argument("window length must be >= 1 s");
  std::map<StreamKey, const StateTimeline*> by_key;
  for (const auto& t : timelines) by_key[t.key] = &t;

  WindowExtraction out;
  for (const auto& iv : intervals) {
    const auto tl = by_key.find(iv.key);
    const auto st = streams.find(iv.key);
    if (tl == by_key.end() || st == streams.end()) {
      ++out.skipped;
      continue;
    }
    const auto& entries = tl->second->entries;
    const auto& samples = st->second;
    const auto it = std::lower_bound(entries.begin(), entries.end(), iv.start,
                                     [](const TimelineEntry& e, std::int64_t t) { return e.timestamp < t; });
    auto idx = static_cast<std::size_t>(it - entries.begin());
    if (it == entries.end() || it->timestamp != iv.start || idx > samples.size()) {
      ++out.skipped;
      continue;
    }
    std::size_t first = idx;
    while (first > 0 && entries[first - 1].state == GpuState::active &&
           entries[first - 1].timestamp >= iv.start - window_len) {
      --first;
    }
    if (first == idx) {
      ++out.skipped;
      continue;
    }
    PreIdleWindow w{iv.key, iv.start, {samples.begin() + static_cast<std::ptrdiff_t>(first),
                                       samples.begin() + static_cast<std::ptrdiff_t>(idx)}};
    out.windows.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fingerprints

enum class SignalGroup : std::size_t { pcie = 0, nic, nvlink, sm, dram, cpu };

inline constexpr std::array<SignalGroup, 6> kSignalGroups = {SignalGroup::pcie, SignalGroup::nic, SignalGroup::nvlink,
                                                             SignalGroup::sm,   SignalGroup::dram, SignalGroup::cpu};

inline std::string_view to_string(SignalGroup g)
{
  static constexpr std::array<std::string_view, 6> names = {"pcie", "nic", "nvlink", "sm", "dram", "cpu"};
  return names[static_cast<std::size_t>(g)];
}

inline constexpr std::size_t kFeatureCount = 2 * kSignalGroups.size();

/// Feature index of a group's window mean; the max follows at +1.
inline constexpr std::size_t mean_index(SignalGroup g) { return 2 * static_cast<std::size_t>(g); }
inline constexpr std::size_t max_index(SignalGroup g) { return 2 * static_cast<std::size_t>(g) + 1; }

using FeatureVector = std::array<std::optional<double>, kFeatureCount>;

struct Fingerprint {
  FeatureVector raw;  ///< native units
  FeatureVector z;    ///< filled by standardize()
};

namespace detail {

inline std::optional<double> group_value(const TelemetrySample& s, SignalGroup g)
{
  const auto max_of = [&](std::initializer_list<Signal> sigs) {
    std::optional<double> m;
    for (auto sig : sigs) {
      if (const auto v = s.signal(sig)) m = m ? std::max(*m, *v) : *v;
    }
    return m;
  };
  switch (g) {
    case SignalGroup::pcie: return max_of({Signal::pcie_tx, Signal::pcie_rx});
    case SignalGroup::nic: return max_of({Signal::nic_tx, Signal::nic_rx});
    case SignalGroup::nvlink: return max_of({Signal::nvlink_tx, Signal::nvlink_rx});
    case SignalGroup::sm: return max_of({Signal::sm, Signal::tensor, Signal::fp16, Signal::fp32, Signal::fp64});
    case SignalGroup::dram: return s.signal(Signal::dram);
    case SignalGroup::cpu: return s.signal(Signal::cpu_util);
  }
  return std::nullopt;
}

}  // namespace detail

/// Mean and max per signal group over the samples that report the group.
inline Fingerprint featurize(const PreIdleWindow& w)
{
  if (w.samples.empty()) throw std::invalid_argument("featurize: empty window");
  Fingerprint f;
  for (auto g : kSignalGroups) {
    double sum = 0.0;
    double mx = -std::numeric_limits<double>::infinity();
    std::size_t n = 0;
    for (const auto& s : w.samples) {
      if (const auto v = detail::group_value(s, g)) {
        sum += *v;
        mx = std::max(mx, *v);
        ++n;
      }
    }
    if (n == 0) continue;
    f.raw[mean_index(g)] = sum / static_cast<double>(n);
    f.raw[max_index(g)] = mx;
  }
  return f;
}

/// z-scores per feature over the windows that have it (population sd); a
/// constant feature standardizes to 0.
inline void standardize(std::vector<Fingerprint>& fps)
{
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& f : fps) {
      if (f.raw[k]) {
        sum += *f.raw[k];
        ++n;
      }
    }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& f : fps) {
      if (f.raw[k]) ss += (*f.raw[k] - mean) * (*f.raw[k] - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    for (auto& f : fps) {
      if (!f.raw[k]) {
        f.z[k].reset();
      } else {
        f.z[k] = sd > 0.0 ? (*f.raw[k] - mean) / sd : 0.0;
      }
    }
  }
}

/// Euclidean distance over the features both points have, rescaled to the
/// full feature count. No shared feature means infinitely far apart.
inline double fingerprint_distance(const FeatureVector& a, const FeatureVector& b)
{
  double ss = 0.0;
  std::size_t common = 0;
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    if (a[k] && b[k]) {
      ss += (*a[k] - *b[k]) * (*a[k] - *b[k]);
      ++common;
    }
  }
  if (common == 0) return std::numeric_limits<double>::infinity();
  return std::sqrt(ss * static_cast<double>(kFeatureCount) / static_cast<double>(common));
}

// ---------------------------------------------------------------------------
// Density clustering

struct ClusterParams {
  std::size_t min_cluster_size = 5;  ///< neighbourhood count, the point itself included
  std::optional<double> radius;      ///< default: k-distance heuristic
  double kdist_quantile = 0.95;
  double kdist_scale = 1.5;
};

inline constexpr int kNoise = -1;

struct Clustering {
  std::vector<int> assignment;  ///< cluster id per point, or kNoise
  int cluster_count = 0;
  double radius = 0.0;
  std::string warning;
};

/// Radius from the distribution of each point's distance to its
/// (min_cluster_size - 1)-th nearest other point.
inline double kdistance_radius(const std::vector<FeatureVector>& pts, const ClusterParams& p)
{
  const auto k = p.min_cluster_size > 1 ? p.min_cluster_size - 1 : 1;
  std::vector<double> kd;
  std::vector<double> d;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    d.clear();
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j != i) d.push_back(fingerprint_distance(pts[i], pts[j]));
    }
    if (d.size() < k) continue;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    if (std::isfinite(d[k - 1])) kd.push_back(d[k - 1]);
  }
  if (kd.empty()) return 0.0;
  return p.kdist_scale * stats::nearest_rank(kd, p.kdist_quantile);
}

/// DBSCAN over the given order: clusters grow from the lowest-index unvisited
/// core point, so ids and border claims follow input order.
inline Clustering cluster_windows(const std::vector<FeatureVector>& pts, const ClusterParams& p)
{
  if (p.min_cluster_size < 1) throw std::invalid_argument("min_cluster_size must be >= 1");
  Clustering c;
  c.assignment.assign(pts.size(), kNoise);
  if (pts.size() < p.min_cluster_size) {
    c.warning = "fewer windows than min_cluster_size; all points are noise";
    return c;
  }
  c.radius = p.radius ? *p.radius : kdistance_radius(pts, p);
  if (!(c.radius >= 0.0)) throw std::invalid_argument("cluster radius must be non-negative");

  const auto n = pts.size();
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (fingerprint_distance(pts[i], pts[j]) <= c.radius || i == j) nbrs[i].push_back(j);
    }
  }
  const auto core = [&](std::size_t i) { return nbrs[i].size() >= p.min_cluster_size; };

  std::vector<bool> visited(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (visited[i] || !core(i)) continue;
    const int id = c.cluster_count++;
    std::deque<std::size_t> frontier{i};
    visited[i] = true;
    c.assignment[i] = id;
    while (!frontier.empty()) {
      const auto q = frontier.front();
      frontier.pop_front();
      for (auto j : nbrs[q]) {
        if (c.assignment[j] == kNoise) c.assignment[j] = id;
        if (!visited[j] && core(j)) {
          visited[j] = true;
          c.assignment[j] = id;
          frontier.push_back(j);
        }
      }
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Labeling

struct LabelRules {
  double dominance_margin = 0.5;  ///< z by which the top group must lead
  double cpu_elevated = 0.5;      ///< z
};

struct LabeledCluster {
  int id = 0;
  std::vector<std::size_t> members;  ///< point indices
  FeatureVector centroid;            ///< mean standardized features
  FingerprintLabel label = FingerprintLabel::other;
};

/// Applies the rule order to a standardized centroid.
inline FingerprintLabel label_centroid(const FeatureVector& z, const LabelRules& rules = {})
{
  enum Group { pcie, nic, nvlink, compute };
  std::vector<std::pair<double, Group>> groups;
  const auto add = [&](std::optional<double> v, Group g) {
    if (v) groups.push_back({*v, g});
  };
  add(z[max_index(SignalGroup::pcie)], pcie);
  add(z[max_index(SignalGroup::nic)], nic);
  add(z[max_index(SignalGroup::nvlink)], nvlink);
  const auto sm = z[max_index(SignalGroup::sm)], dram = z[max_index(SignalGroup::dram)];
  if (sm || dram) add(std::max(sm.value_or(-std::numeric_limits<double>::infinity()),
                               dram.value_or(-std::numeric_limits<double>::infinity())),
                      compute);
  if (groups.empty()) return FingerprintLabel::other;
  std::stable_sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const bool dominant = groups.size() == 1 || groups[0].first - groups[1].first >= rules.dominance_margin;
  if (!dominant) return FingerprintLabel::other;
  const auto cpu = z[max_index(SignalGroup::cpu)];
  const bool cpu_up = cpu && *cpu >= rules.cpu_elevated;
  switch (groups[0].second) {
    case nvlink: return FingerprintLabel::nvlink_heavy;
    case pcie: return cpu_up ? FingerprintLabel::pcie_heavy : FingerprintLabel::other;
    case nic: return cpu_up ? FingerprintLabel::nic_heavy : FingerprintLabel::other;
    case compute: return FingerprintLabel::compute_to_idle;
  }
  return FingerprintLabel::other;
}

inline std::vector<LabeledCluster> label_clusters(const std::vector<FeatureVector>& z, const Clustering& c,
                                                  const LabelRules& rules = {})
{
  std::vector<LabeledCluster> out(static_cast<std::size_t>(c.cluster_count));
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i);
  for (std::size_t i = 0; i < c.assignment.size(); ++i) {
    if (c.assignment[i] != kNoise) out[static_cast<std::size_t>(c.assignment[i])].members.push_back(i);
  }
  for (auto& lc : out) {
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      double sum = 0.0;
      std::size_t n = 0;
      for (auto m : lc.members) {
        if (z[m][k]) {
          sum += *z[m][k];
          ++n;
        }
      }
      if (n > 0) lc.centroid[k] = sum / static_cast<double>(n);
    }
    lc.label = label_centroid(lc.centroid, rules);
  }
  return out;
}

/// Share of each label over clustered (non-noise) windows; all zero when
/// every window is noise.
inline std::map<FingerprintLabel, double> label_shares(const std::vector<LabeledCluster>& clusters)
{
  std::map<FingerprintLabel, double> shares;
  for (auto l : kFingerprintLabels) shares[l] = 0.0;
  std::size_t total = 0;
  for (const auto& c : clusters) total += c.members.size();
  if (total == 0) return shares;
  for (const auto& c : clusters) shares[c.label] += static_cast<double>(c.members.size()) / static_cast<double>(total);
  return shares;
}

// ---------------------------------------------------------------------------
// Whole pass

struct PreIdleResult {
  WindowExtraction extraction;
  std::vector<Fingerprint> fingerprints;
  Clustering clustering;
  std::vector<LabeledCluster> clusters;
  std::vector<std::optional<FingerprintLabel>> window_labels;  ///< nullopt for noise
  std::map<FingerprintLabel, double> shares;
};

inline PreIdleResult analyze_preidle(const std::vector<ExecIdleInterval>& intervals,
                                     const std::vector<StateTimeline>& timelines,
                                     const std::map<StreamKey, std::vector<TelemetrySample>>& streams,
                                     const ClusterParams& params = {}, const LabelRules& rules = {},
                                     std::int64_t window_len = kPreIdleWindow)
{
  PreIdleResult r;
  r.extraction = extract_windows(intervals, timelines, streams, window_len);
  for (const auto& w : r.extraction.windows) r.fingerprints.push_back(featurize(w));
  standardize(r.fingerprints);
  std::vector<FeatureVector> z;
  z.reserve(r.fingerprints.size());
  for (const auto& f : r.fingerprints) z.push_back(f.z);
  r.clustering = cluster_windows(z, params);
  r.clusters = label_clusters(z, r.clustering, rules);
  for (auto a : r.clustering.assignment) {
    r.window_labels.push_back(a == kNoise ? std::nullopt
                                          : std::optional{r.clusters[static_cast<std::size_t>(a)].label});
  }
  r.shares = label_shares(r.clusters);
  return r;
}

/// Fraction of truth-tagged windows whose assigned label matches; noise and
/// untagged windows count as misses.
inline double label_accuracy(const PreIdleResult& r, const std::vector<FingerprintTruth>& truth)
{
  if (truth.empty()) return 0.0;
  std::map<std::pair<StreamKey, std::int64_t>, FingerprintLabel> assigned;
  for (std::size_t i = 0; i < r.extraction.windows.size(); ++i) {
    if (r.window_labels[i]) assigned[{r.extraction.windows[i].key, r.extraction.windows[i].interval_start}] = *r.window_labels[i];
  }
  std::size_t hits = 0;
  for (const auto& t : truth) {
    const auto it = assigned.find({t.key, t.interval_start});
    if (it != assigned.end() && it->second == t.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Reports

inline void write_windows(std::ostream& out, const PreIdleResult& r)
{
  out << "job_id,hostname,gpu_id,interval_start,window_start,window_len,cluster,label";
  for (auto g : kSignalGroups) out << ',' << to_string(g) << "_mean," << to_string(g) << "_max";
  for (auto g : kSignalGroups) out << ',' << to_string(g) << "_mean_z," << to_string(g) << "_max_z";
  out << '\n';
  for (std::size_t i = 0; i < r.extraction.windows.size(); ++i) {
    const auto& w = r.extraction.windows[i];
    out << w.key.job_id << ',' << w.key.hostname << ',' << w.key.gpu_id << ',' << w.interval_start << ','
        << w.samples.front().timestamp << ',' << w.samples.size() << ',' << r.clustering.assignment[i] << ','
        << (r.window_labels[i] ? to_string(*r.window_labels[i]) : std::string_view("noise"));
    for (const auto& v : r.fingerprints[i].raw) out << ',' << records::format_optional(v);
    for (const auto& v : r.fingerprints[i].z) out << ',' << records::format_optional(v);
    out << '\n';
  }
}

inline void write_clusters(std::ostream& out, const PreIdleResult& r)
{
  out << "cluster,size,label";
  for (auto g : kSignalGroups) out << ',' << to_string(g) << "_mean_z," << to_string(g) << "_max_z";
  out << '\n';
  for (const auto& c : r.clusters) {
    out << c.id << ',' << c.members.size() << ',' << to_string(c.label);
    for (const auto& v : c.centroid) out << ',' << records::format_optional(v);
    out << '\n';
  }
}

inline void write_shares(std::ostream& out, const PreIdleResult& r)
{
  std::size_t noise = 0;
  for (auto a : r.clustering.assignment) noise += a == kNoise;
  out << "label,share\n";
  if (noise < r.clustering.assignment.size()) {
    for (const auto& [label, share] : r.shares) out << to_string(label) << ',' << records::format_fixed(share, 6) << '\n';
  }
  out << "# windows," << r.extraction.windows.size() << "\n# skipped_intervals," << r.extraction.skipped
      << "\n# noise," << noise << "\n# radius," << records::format_double(r.clustering.radius) << '\n';
}

}  // namespace xidle
