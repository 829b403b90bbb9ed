#pragma once

// Serving-trace model: requests, trace files, thinning, gap statistics, the
// parametric GPU power model and the token-rate service-time model.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "xidle/random.hpp"
#include "xidle/records.hpp"
#include "xidle/stats.hpp"

namespace xidle {

struct Request {
  double arrival = 0.0;  ///< s since replay start
  std::int64_t input_tokens = 1;
  std::int64_t output_tokens = 1;
  std::int64_t id = 0;

  friend bool operator==(const Request&, const Request&) = default;
};

struct TraceParseResult {
  std::vector<Request> requests;
  std::size_t rejected = 0;        ///< malformed or out-of-range lines
  std::size_t beyond_horizon = 0;  ///< arrivals later than the horizon
};

inline constexpr double kDefaultTraceHorizon = 1800.0;

/// Trace file: header, then "arrival_s,input_tokens,output_tokens" lines.
/// Request ids are line ordinals (0-based, header excluded). Output is sorted
/// by arrival, stable on ties.
inline TraceParseResult parse_trace(std::istream& in, double horizon = kDefaultTraceHorizon)
{
  if (!in) throw std::runtime_error("trace source is not readable");
  TraceParseResult r;
  std::string line;
  if (!std::getline(in, line)) return r;
  const records::Header h(line);
  const auto ca = h.require("arrival_s"), ci = h.require("input_tokens"), co = h.require("output_tokens");
  std::int64_t ordinal = 0;
  while (std::getline(in, line)) {
    if (records::trim(line).empty()) continue;
    const auto id = ordinal++;
    const auto f = records::split(line);
    try {
      if (f.size() != h.size()) throw std::invalid_argument("field count");
      const auto arrival = records::parse_double(f[ca]);
      const auto in_tok = records::parse_int(f[ci]);
      const auto out_tok = records::parse_int(f[co]);
      if (!arrival || !in_tok || !out_tok || *arrival < 0.0 || *in_tok < 1 || *out_tok < 1) {
        throw std::invalid_argument("out of range");
      }
      if (*arrival > horizon) {
        ++r.beyond_horizon;
        continue;
      }
      r.requests.push_back({*arrival, *in_tok, *out_tok, id});
    } catch (const std::invalid_argument&) {
      ++r.rejected;
    }
  }
  std::stable_sort(r.requests.begin(), r.requests.end(),
                   [](const Request& a, const Request& b) { return a.arrival < b.arrival; });
  return r;
}

inline TraceParseResult parse_trace_file(const std::string& path, double horizon = kDefaultTraceHorizon)
{
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace '" + path + "'");
  return parse_trace(in, horizon);
}

inline void write_trace(std::ostream& out, const std::vector<Request>& requests)
{
  out << "arrival_s,input_tokens,output_tokens\n";
  for (const auto& r : requests) {
    out << records::format_double(r.arrival) << ',' << r.input_tokens << ',' << r.output_tokens << '\n';
  }
}

/// Independent Bernoulli retention; kept requests are unchanged.
inline std::vector<Request> thin_trace(const std::vector<Request>& requests, double keep_probability,
                                       std::uint64_t seed)
{
  if (!(keep_probability > 0.0 && keep_probability <= 1.0)) {
    throw std::invalid_argument("keep_probability must be in (0, 1]");
  }
  Rng rng(seed);
  std::vector<Request> out;
  for (const auto& r : requests) {
    // Always draw so the retained subset for a seed does not depend on p == 1.
    if (rng.uniform() < keep_probability) out.push_back(r);
  }
  return out;
}

/// Successive arrival gaps of each per-GPU stream, pooled. Streams with fewer
/// than two requests contribute nothing.
inline std::vector<double> inter_request_gaps(const std::vector<std::vector<double>>& streams)
{
  std::vector<double> gaps;
  for (const auto& s : streams) {
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (s[i] < s[i - 1]) throw std::invalid_argument("inter_request_gaps: stream not sorted");
      gaps.push_back(s[i] - s[i - 1]);
    }
  }
  return gaps;
}

inline std::vector<stats::CdfPoint> inter_request_cdf(const std::vector<std::vector<double>>& streams)
{
  return stats::empirical_cdf(inter_request_gaps(streams));
}

// ---------------------------------------------------------------------------
// Power model

enum class FreqSetting : std::size_t { f_max = 0, f_min_sm = 1, f_min_sm_mem = 2 };

inline constexpr std::array<FreqSetting, 3> kFreqSettings = {FreqSetting::f_max, FreqSetting::f_min_sm,
                                                             FreqSetting::f_min_sm_mem};

inline std::string_view to_string(FreqSetting f)
{
  switch (f) {
    case FreqSetting::f_max: return "f_max";
    case FreqSetting::f_min_sm: return "f_min_sm";
    case FreqSetting::f_min_sm_mem: return "f_min_sm_mem";
  }
  return "f_max";
}

inline FreqSetting freq_from_string(std::string_view s)
{
  if (s == "f_max") return FreqSetting::f_max;
  if (s == "f_min_sm") return FreqSetting::f_min_sm;
  if (s == "f_min_sm_mem") return FreqSetting::f_min_sm_mem;
  throw std::invalid_argument("unknown frequency setting '" + std::string(s) + "'");
}

struct PowerModel {
  double p_deep = 35.0;
  std::array<double, 3> p_exec_idle = {105.0, 61.0, 35.0};  ///< by FreqSetting
  double p_active = 140.0;                                  ///< serving at f_max
  std::array<double, 3> slowdown = {1.0, 1.3, 2.6};         ///< service-time multiplier
  double transition_latency = 0.25;                         ///< s

  double exec_idle(FreqSetting f) const { return p_exec_idle[static_cast<std::size_t>(f)]; }
  double slowdown_at(FreqSetting f) const { return slowdown[static_cast<std::size_t>(f)]; }

  /// Power while serving at a setting. The dynamic share above exec-idle
  /// power scales with the service rate, so a slowed request costs no more
  /// dynamic energy than at f_max.
  double busy(FreqSetting f) const
  {
    return exec_idle(f) + (p_active - exec_idle(FreqSetting::f_max)) / slowdown_at(f);
  }

  void validate() const
  {
    const auto& e = p_exec_idle;
    if (!(p_deep >= 0.0 && p_deep <= e[2] && e[2] <= e[1] && e[1] <= e[0] && e[0] <= p_active)) {
      throw std::invalid_argument("power model: need p_deep <= exec(min_sm_mem) <= exec(min_sm) <= exec(max) <= p_active");
    }
    if (!(slowdown[0] == 1.0 && slowdown[0] <= slowdown[1] && slowdown[1] <= slowdown[2])) {
      throw std::invalid_argument("power model: need slowdown(f_max) = 1 <= slowdown(min_sm) <= slowdown(min_sm_mem)");
    }
    if (!(transition_latency >= 0.0)) throw std::invalid_argument("power model: negative transition latency");
  }
};

/// L40S defaults: 35 W deep idle, 105/61/35 W execution-idle at f_max / SM-min
/// / SM+mem-min.
inline PowerModel l40s_power_model() { return PowerModel{}; }

struct ServiceRates {
  double prefill = 2000.0;  ///< tokens/s
  double decode = 100.0;    ///< tokens/s
};

inline double service_time(const Request& r, FreqSetting f, const ServiceRates& rates, const PowerModel& pm)
{
  if (!(rates.prefill > 0.0 && rates.decode > 0.0)) throw std::invalid_argument("service rates must be positive");
  const double base = static_cast<double>(r.input_tokens) / rates.prefill +
                      static_cast<double>(r.output_tokens) / rates.decode;
  return base * pm.slowdown_at(f);
}

}  // namespace xidle
