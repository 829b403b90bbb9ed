#pragma once

// Deterministic discrete-event replay of a request trace on a pool of
// modelled GPUs.
//
// Each GPU serves FIFO, one request at a time. Between requests a loaded GPU
// sits in execution-idle at whatever clock the controller chose; GPUs left
// out by a consolidation policy stay in deep idle for the whole run. Time is
// kept in integer microseconds so per-GPU state occupancies add up to the
// replay duration exactly.
//
// Frequency changes are decided on control ticks and take effect after the
// model's transition latency. Work progresses at 1/slowdown of the f_max rate
// under the effective setting, so a request that lands on a downscaled GPU
// runs slowly until the next tick observes it and the restore lands.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "xidle/controller.hpp"
#include "xidle/replay.hpp"
#include "xidle/stats.hpp"
#include "xidle/telemetry.hpp"

namespace xidle {

enum class PolicyKind { balanced, consolidate };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::balanced;
  std::size_t active_gpu_count = 0;  ///< consolidate only; GPUs [0, k) take traffic
};

struct PoolGpu {
  GpuModelSpec spec;
  PowerModel power;
};

using Pool = std::vector<PoolGpu>;

inline Pool uniform_pool(std::size_t n, const GpuModelSpec& spec, const PowerModel& pm)
{
  return Pool(n, PoolGpu{spec, pm});
}

class SimConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class SimState { deep_idle, exec_idle, active, transition };

inline constexpr std::array<SimState, 4> kSimStates = {SimState::deep_idle, SimState::exec_idle, SimState::active,
                                                       SimState::transition};

inline std::string_view to_string(SimState s)
{
  switch (s) {
    case SimState::deep_idle: return "deep-idle";
    case SimState::exec_idle: return "exec-idle";
    case SimState::active: return "active";
    case SimState::transition: return "transition";
  }
  return "active";
}

struct RequestOutcome {
  std::int64_t id = 0;
  double arrival = 0.0;
  std::size_t gpu = 0;
  double start = 0.0;
  double completion = 0.0;
  double latency = 0.0;
  bool completed = false;

  friend bool operator==(const RequestOutcome&, const RequestOutcome&) = default;
};

/// Dwell in one power bucket; energy is sum(power * dwell) over buckets.
struct PowerBucket {
  SimState state = SimState::exec_idle;
  double power = 0.0;
  std::int64_t dwell_us = 0;

  friend bool operator==(const PowerBucket&, const PowerBucket&) = default;
};

struct GpuOutcome {
  std::array<std::int64_t, 4> occupancy_us{};  ///< by SimState
  std::int64_t busy_us = 0;                    ///< serving, including during transitions
  std::vector<PowerBucket> buckets;
  double energy = 0.0;  ///< J
  std::size_t served = 0;

  double occupancy(SimState s) const { return static_cast<double>(occupancy_us[static_cast<std::size_t>(s)]) / 1e6; }

  friend bool operator==(const GpuOutcome&, const GpuOutcome&) = default;
};

struct ControllerLogEntry {
  std::size_t gpu = 0;
  double time = 0.0;
  ControllerAction action = ControllerAction::none;
  FreqSetting setting = FreqSetting::f_max;  ///< setting requested

  friend bool operator==(const ControllerLogEntry&, const ControllerLogEntry&) = default;
};

struct TickRecord {
  std::size_t gpu = 0;
  double time = 0.0;
  bool low_activity = false;

  friend bool operator==(const TickRecord&, const TickRecord&) = default;
};

struct SimResult {
  double duration = 0.0;
  std::vector<RequestOutcome> requests;  ///< input order
  std::vector<GpuOutcome> gpus;
  std::vector<ControllerLogEntry> actions;
  std::vector<TickRecord> ticks;  ///< only with SimOptions::record_ticks
  double total_energy = 0.0;      ///< J
  double average_power = 0.0;     ///< W, whole pool
  double p50_latency = 0.0;
  double p95_latency = 0.0;
  double p99_latency = 0.0;
  double busy_fraction = 0.0;  ///< busy GPU-time / (pool size * duration)
  std::size_t unfinished = 0;

  friend bool operator==(const SimResult&, const SimResult&) = default;
};

struct SimOptions {
  bool record_ticks = false;
};

namespace detail {

inline std::int64_t to_us(double seconds) { return static_cast<std::int64_t>(std::llround(seconds * 1e6)); }

class Simulation {
public:
  Simulation(const std::vector<Request>& requests, const Pool& pool, const PolicyConfig& policy,
             const std::optional<ControllerConfig>& controller, const ServiceRates& rates, double duration,
             SimOptions options)
      : requests_(requests), pool_(pool), controller_(controller), rates_(rates), options_(options)
  {
    if (pool.empty()) throw SimConfigError("empty GPU pool");
    if (!(duration > 0.0)) throw SimConfigError("duration must be positive");
    for (const auto& g : pool) g.power.validate();
    if (controller) controller->validate();
    duration_us_ = to_us(duration);

    std::size_t k = pool.size();
    if (policy.kind == PolicyKind::consolidate) {
      k = policy.active_gpu_count;
      if (k < 1 || k > pool.size()) throw SimConfigError("consolidate policy needs 1 <= k <= pool size");
    }
    gpus_.resize(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) gpus_[i].loaded = i < k;
    routable_ = k;
    for (const auto& r : requests) {
      if (r.arrival < 0.0 || r.arrival > duration) throw SimConfigError("request arrival outside [0, duration]");
    }
  }

  SimResult run()
  {
    for (std::size_t i = 0; i < requests_.size(); ++i) push({to_us(requests_[i].arrival), kArrival, i, 0});
    if (controller_) {
      const auto period_us = to_us(controller_->period);
      for (std::int64_t k = 1; k * period_us <= duration_us_; ++k) push({k * period_us, kTick, 0, 0});
    }
    outcomes_.resize(requests_.size());
    for (std::size_t i = 0; i < requests_.size(); ++i) {
      outcomes_[i].id = requests_[i].id;
      outcomes_[i].arrival = requests_[i].arrival;
    }

    while (!events_.empty()) {
      const auto ev = events_.top();
      events_.pop();
      if (ev.time > duration_us_) break;
      switch (ev.kind) {
        case kCompletion: on_completion(ev); break;
        case kTransition: on_transition(ev); break;
        case kArrival: on_arrival(ev); break;
        case kTick: on_tick(ev); break;
      }
    }
    for (std::size_t g = 0; g < gpus_.size(); ++g) advance(g, duration_us_);
    return finish();
  }

private:
  enum EventKind : int { kCompletion = 0, kTransition = 1, kArrival = 2, kTick = 3 };

  struct Event {
    std::int64_t time;
    EventKind kind;
    std::size_t target;     ///< request index for arrivals, GPU index otherwise
    std::uint64_t version;  ///< invalidates stale completion/transition events
    std::uint64_t seq = 0;
  };

  struct EventAfter {
    bool operator()(const Event& a, const Event& b) const
    {
      if (a.time != b.time) return a.time > b.time;
      if (a.kind != b.kind) return a.kind > b.kind;
      return a.seq > b.seq;
    }
  };

  struct Serving {
    std::size_t request;
    double remaining_us;  ///< work left, in f_max microseconds
  };

  struct GpuRuntime {
    bool loaded = true;
    std::deque<std::size_t> queue;
    std::optional<Serving> serving;
    FreqSetting setting = FreqSetting::f_max;
    std::optional<FreqSetting> pending;
    std::int64_t pending_at = 0;
    std::uint64_t completion_version = 0;
    std::uint64_t transition_version = 0;
    std::int64_t last_update = 0;
    std::int64_t last_busy_end = -1;
    ControllerState ctrl;
    std::map<std::tuple<int, double>, std::int64_t> dwell;  ///< (state, power) -> us
    std::array<std::int64_t, 4> occupancy{};
    std::int64_t busy_us = 0;
    std::size_t served = 0;
  };

  void push(Event e)
  {
    e.seq = next_seq_++;
    events_.push(e);
  }

  /// Accrues dwell and service progress on GPU g up to `now`.
  void advance(std::size_t g, std::int64_t now)
  {
    auto& gpu = gpus_[g];
    const auto dt = now - gpu.last_update;
    if (dt <= 0) return;
    const auto& pm = pool_[g].power;
    SimState state;
    double power;
    if (!gpu.loaded) {
      state = SimState::deep_idle;
      power = pm.p_deep;
    } else if (gpu.pending) {
      state = SimState::transition;
      power = gpu.serving ? pm.busy(gpu.setting) : std::max(pm.exec_idle(gpu.setting), pm.exec_idle(*gpu.pending));
    } else if (gpu.serving) {
      state = SimState::active;
      power = pm.busy(gpu.setting);
    } else {
      state = SimState::exec_idle;
      power = pm.exec_idle(gpu.setting);
    }
    gpu.dwell[{static_cast<int>(state), power}] += dt;
    gpu.occupancy[static_cast<std::size_t>(state)] += dt;
    if (gpu.serving) {
      gpu.busy_us += dt;
      gpu.serving->remaining_us =
          std::max(0.0, gpu.serving->remaining_us - static_cast<double>(dt) / pm.slowdown_at(gpu.setting));
    }
    gpu.last_update = now;
  }

  void schedule_completion(std::size_t g, std::int64_t now)
  {
    auto& gpu = gpus_[g];
    ++gpu.completion_version;
    const double wall = gpu.serving->remaining_us * pool_[g].power.slowdown_at(gpu.setting);
    const auto done = now + std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(wall - 1e-6)));
    push({done, kCompletion, g, gpu.completion_version});
  }

  void start_next(std::size_t g, std::int64_t now)
  {
    auto& gpu = gpus_[g];
    if (gpu.serving || gpu.queue.empty()) return;
    const auto idx = gpu.queue.front();
    gpu.queue.pop_front();
    const double base_s = service_time(requests_[idx], FreqSetting::f_max, rates_, pool_[g].power);
    gpu.serving = Serving{idx, base_s * 1e6};
    outcomes_[idx].start = static_cast<double>(now) / 1e6;
    schedule_completion(g, now);
  }

  std::size_t route() const
  {
    std::size_t best = 0;
    std::size_t best_load = SIZE_MAX;
    for (std::size_t g = 0; g < routable_; ++g) {
      const auto load = gpus_[g].queue.size() + (gpus_[g].serving ? 1 : 0);
      if (load < best_load) {
        best = g;
        best_load = load;
      }
    }
    return best;
  }

  void on_arrival(const Event& ev)
  {
    const auto g = route();
    advance(g, ev.time);
    outcomes_[ev.target].gpu = g;
    gpus_[g].queue.push_back(ev.target);
    start_next(g, ev.time);
  }

  void on_completion(const Event& ev)
  {
    auto& gpu = gpus_[ev.target];
    if (ev.version != gpu.completion_version || !gpu.serving) return;
    advance(ev.target, ev.time);
    auto& out = outcomes_[gpu.serving->request];
    out.completion = static_cast<double>(ev.time) / 1e6;
    out.latency = out.completion - out.arrival;
    out.completed = true;
    ++gpu.served;
    gpu.serving.reset();
    gpu.last_busy_end = ev.time;
    start_next(ev.target, ev.time);
  }

  void on_transition(const Event& ev)
  {
    auto& gpu = gpus_[ev.target];
    if (ev.version != gpu.transition_version || !gpu.pending) return;
    advance(ev.target, ev.time);
    gpu.setting = *gpu.pending;
    gpu.pending.reset();
    if (gpu.serving) schedule_completion(ev.target, ev.time);
  }

  void request_setting(std::size_t g, FreqSetting target, std::int64_t now)
  {
    auto& gpu = gpus_[g];
    advance(g, now);
    const auto latency = to_us(pool_[g].power.transition_latency);
    ++gpu.transition_version;
    if (latency == 0) {
      gpu.pending.reset();
      gpu.setting = target;
      if (gpu.serving) schedule_completion(g, now);
      return;
    }
    gpu.pending = target;
    gpu.pending_at = now + latency;
    push({gpu.pending_at, kTransition, g, gpu.transition_version});
  }

  void on_tick(const Event& ev)
  {
    const auto period_us = to_us(controller_->period);
    const double t = static_cast<double>(ev.time) / 1e6;
    for (std::size_t g = 0; g < gpus_.size(); ++g) {
      auto& gpu = gpus_[g];
      if (!gpu.loaded) continue;
      const bool busy = gpu.serving.has_value() || gpu.last_busy_end > ev.time - period_us;
      if (options_.record_ticks) ticks_.push_back({g, t, !busy});
      const auto step = controller_step(gpu.ctrl, *controller_, t, !busy);
      gpu.ctrl = step.state;
      if (step.action == ControllerAction::downscale) {
        actions_.push_back({g, t, step.action, controller_->target});
        request_setting(g, controller_->target, ev.time);
      } else if (step.action == ControllerAction::restore) {
        actions_.push_back({g, t, step.action, FreqSetting::f_max});
        request_setting(g, FreqSetting::f_max, ev.time);
      }
    }
  }

  SimResult finish()
  {
    SimResult r;
    r.duration = static_cast<double>(duration_us_) / 1e6;
    std::int64_t busy_total = 0;
    for (auto& gpu : gpus_) {
      GpuOutcome o;
      o.occupancy_us = gpu.occupancy;
      o.busy_us = gpu.busy_us;
      o.served = gpu.served;
      for (const auto& [key, dwell] : gpu.dwell) {
        const auto& [state, power] = key;
        o.buckets.push_back({static_cast<SimState>(state), power, dwell});
        o.energy += power * static_cast<double>(dwell) / 1e6;
      }
      r.total_energy += o.energy;
      busy_total += gpu.busy_us;
      r.gpus.push_back(std::move(o));
    }
    r.requests = std::move(outcomes_);
    r.actions = std::move(actions_);
    r.ticks = std::move(ticks_);
    r.average_power = r.total_energy / r.duration;
    r.busy_fraction = static_cast<double>(busy_total) / (static_cast<double>(duration_us_) * static_cast<double>(gpus_.size()));
    std::vector<double> lat;
    for (const auto& o : r.requests) {
      if (o.completed) {
        lat.push_back(o.latency);
      } else {
        ++r.unfinished;
      }
    }
    if (!lat.empty()) {
      std::sort(lat.begin(), lat.end());
      r.p50_latency = stats::nearest_rank_sorted(lat, 0.50);
      r.p95_latency = stats::nearest_rank_sorted(lat, 0.95);
      r.p99_latency = stats::nearest_rank_sorted(lat, 0.99);
    }
    return r;
  }

  const std::vector<Request>& requests_;
  const Pool& pool_;
  std::optional<ControllerConfig> controller_;
  ServiceRates rates_;
  SimOptions options_;
  std::int64_t duration_us_ = 0;
  std::size_t routable_ = 0;
  std::vector<GpuRuntime> gpus_;
  std::priority_queue<Event, std::vector<Event>, EventAfter> events_;
  std::uint64_t next_seq_ = 0;
  std::vector<RequestOutcome> outcomes_;
  std::vector<ControllerLogEntry> actions_;
  std::vector<TickRecord> ticks_;
};

}  // namespace detail

/// Replays `requests` (sorted by arrival, all within [0, duration]). The run
/// is fully deterministic; `seed` is accepted for interface stability and is
/// not consumed by the event loop.
inline SimResult run_simulation(const std::vector<Request>& requests, const Pool& pool, const PolicyConfig& policy,
                                const std::optional<ControllerConfig>& controller, const ServiceRates& rates,
                                double duration, std::uint64_t seed = 0, SimOptions options = {})
{
  (void)seed;
  return detail::Simulation(requests, pool, policy, controller, rates, duration, options).run();
}

struct SimScenario {
  std::string name;
  PolicyConfig policy;
  std::optional<ControllerConfig> controller;
};

struct ComparisonRow {
  std::string name;
  double energy = 0.0;
  double average_power = 0.0;
  double p95_latency = 0.0;
  double busy_fraction = 0.0;
  double energy_ratio = 1.0;
  double p95_ratio = 1.0;
  double busy_ratio = 1.0;
};

inline double normalized(double value, double baseline)
{
  if (baseline == 0.0) return value == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return value / baseline;
}

inline std::vector<ComparisonRow> compare_results(const std::vector<std::string>& names,
                                                  const std::vector<SimResult>& results)
{
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const auto& b = results.front();
    rows.push_back({names[i], r.total_energy, r.average_power, r.p95_latency, r.busy_fraction,
                    normalized(r.total_energy, b.total_energy), normalized(r.p95_latency, b.p95_latency),
                    normalized(r.busy_fraction, b.busy_fraction)});
  }
  return rows;
}

/// Runs every scenario on the same trace and pool; ratios are relative to the
/// first scenario.
inline std::vector<ComparisonRow> compare_policies(const std::vector<Request>& requests, const Pool& pool,
                                                   const std::vector<SimScenario>& scenarios,
                                                   const ServiceRates& rates, double duration,
                                                   std::uint64_t seed = 0)
{
  std::vector<std::string> names;
  std::vector<SimResult> results;
  for (const auto& s : scenarios) {
    names.push_back(s.name);
    results.push_back(run_simulation(requests, pool, s.policy, s.controller, rates, duration, seed));
  }
  return compare_results(names, results);
}

}  // namespace xidle
