#include <doctest.h>

#include <cmath>

#include "xidle/catalog.hpp"
#include "xidle/random.hpp"
#include "xidle/simulator.hpp"

using namespace xidle;

namespace {

const GpuModelSpec kSpec = default_catalog().lookup("L40S");
const ServiceRates kRates{2000.0, 100.0};

std::vector<Request> bursty(std::uint64_t seed, double duration)
{
  Rng rng(seed);
  std::vector<Request> out;
  double t = rng.uniform(0.0, 2.0);
  while (t < duration - 30.0) {
    out.push_back({std::round(t * 1000.0) / 1000.0, rng.uniform_int(200, 1200), rng.uniform_int(20, 120),
                   static_cast<std::int64_t>(out.size())});
    t += rng.bernoulli(0.55) ? rng.uniform(0.5, 6.0) : 4.0 + rng.exponential(1.0 / 12.0);
  }
  return out;
}

/// Total energy recomputed from the bucket list.
double bucket_energy(const GpuOutcome& g)
{
  double e = 0.0;
  for (const auto& b : g.buckets) e += b.power * static_cast<double>(b.dwell_us) / 1e6;
  return e;
}

ControllerConfig controller(FreqSetting target)
{
  ControllerConfig c;
  c.target = target;
  return c;
}

}  // namespace

TEST_CASE("an idle loaded GPU draws execution-idle power")
{
  const auto r = run_simulation({}, uniform_pool(1, kSpec, {}), {}, std::nullopt, kRates, 100.0);
  CHECK(r.total_energy == doctest::Approx(105.0 * 100.0));
  CHECK_EQ(r.gpus[0].occupancy_us[static_cast<std::size_t>(SimState::exec_idle)], 100'000'000);
  CHECK_EQ(r.busy_fraction, 0.0);
}

TEST_CASE("consolidation leaves the other GPUs in deep idle")
{
  const auto reqs = bursty(1, 600.0);
  const auto r = run_simulation(reqs, uniform_pool(8, kSpec, {}), {PolicyKind::consolidate, 2}, std::nullopt, kRates,
                                600.0);
  for (std::size_t g = 2; g < 8; ++g) {
    CHECK_EQ(r.gpus[g].energy, 35.0 * 600.0);
    CHECK_EQ(r.gpus[g].served, 0u);
    CHECK_EQ(r.gpus[g].occupancy_us[static_cast<std::size_t>(SimState::deep_idle)], 600'000'000);
  }
  for (const auto& o : r.requests) CHECK_LT(o.gpu, 2u);
}

TEST_CASE("consolidation policy needs a valid active set")
{
  const auto pool = uniform_pool(4, kSpec, {});
  CHECK_THROWS_AS(run_simulation({}, pool, {PolicyKind::consolidate, 0}, std::nullopt, kRates, 10.0), SimConfigError);
  CHECK_THROWS_AS(run_simulation({}, pool, {PolicyKind::consolidate, 5}, std::nullopt, kRates, 10.0), SimConfigError);
  CHECK_THROWS_AS(run_simulation({{20.0, 1, 1, 0}}, pool, {}, std::nullopt, kRates, 10.0), SimConfigError);
  CHECK_THROWS_AS(run_simulation({}, {}, {}, std::nullopt, kRates, 10.0), SimConfigError);
}

TEST_CASE("pool power follows the closed form for balanced and consolidated load")
{
  // 1.5 s requests every 0.75 s keep two GPUs' worth of work busy.
  std::vector<Request> reqs;
  for (int i = 0; i < 1996; ++i) reqs.push_back({0.75 * i, 1000, 100, i});
  const auto pool = uniform_pool(8, kSpec, {});
  const auto balanced = run_simulation(reqs, pool, {}, std::nullopt, kRates, 1500.0);
  const auto consolidated = run_simulation(reqs, pool, {PolicyKind::consolidate, 2}, std::nullopt, kRates, 1500.0);
  CHECK(balanced.average_power == doctest::Approx(910.0).epsilon(0.005));
  CHECK(consolidated.average_power == doctest::Approx(490.0).epsilon(0.005));
  CHECK(consolidated.total_energy / balanced.total_energy == doctest::Approx(0.538).epsilon(0.01));
  CHECK(consolidated.busy_fraction == doctest::Approx(balanced.busy_fraction));
}

TEST_CASE("balanced routing picks the least loaded GPU, lowest index on ties")
{
  const std::vector<Request> reqs = {{0.0, 1000, 100, 0}, {0.1, 1000, 100, 1}, {0.2, 1000, 100, 2}, {2.0, 1000, 100, 3}};
  const auto r = run_simulation(reqs, uniform_pool(3, kSpec, {}), {}, std::nullopt, kRates, 10.0);
  CHECK_EQ(r.requests[0].gpu, 0u);
  CHECK_EQ(r.requests[1].gpu, 1u);
  CHECK_EQ(r.requests[2].gpu, 2u);
  CHECK_EQ(r.requests[3].gpu, 0u);
  for (const auto& o : r.requests) CHECK_EQ(o.latency, 1.5);
}

TEST_CASE("a single GPU serves FIFO without idling on a non-empty queue")
{
  const std::vector<Request> reqs = {{0.0, 1000, 100, 0}, {0.5, 1000, 100, 1}, {0.6, 1000, 100, 2}};
  const auto r = run_simulation(reqs, uniform_pool(1, kSpec, {}), {}, std::nullopt, kRates, 10.0);
  CHECK_EQ(r.requests[0].completion, 1.5);
  CHECK_EQ(r.requests[1].start, 1.5);
  CHECK_EQ(r.requests[1].completion, 3.0);
  CHECK_EQ(r.requests[2].start, 3.0);
  CHECK_EQ(r.requests[2].completion, 4.5);
  CHECK_EQ(r.gpus[0].busy_us, 4'500'000);
}

TEST_CASE("occupancy and energy are conserved")
{
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto reqs = bursty(seed, 900.0);
    for (auto target : {FreqSetting::f_min_sm, FreqSetting::f_min_sm_mem}) {
      const auto r = run_simulation(reqs, uniform_pool(3, kSpec, {}), {PolicyKind::consolidate, 2}, controller(target),
                                    kRates, 900.0);
      double total = 0.0;
      for (const auto& g : r.gpus) {
        std::int64_t sum = 0;
        for (auto o : g.occupancy_us) sum += o;
        CHECK_EQ(sum, 900'000'000);
        std::int64_t dwell = 0;
        for (const auto& b : g.buckets) dwell += b.dwell_us;
        CHECK_EQ(dwell, 900'000'000);
        CHECK_EQ(bucket_energy(g), g.energy);
        total += g.energy;
      }
      CHECK_EQ(total, r.total_energy);
      CHECK_EQ(r.unfinished, 0u);
    }
  }
}

TEST_CASE("controller log agrees with the observed ticks")
{
  const auto reqs = bursty(7, 1200.0);
  const auto cfg = controller(FreqSetting::f_min_sm);
  const auto r = run_simulation(reqs, uniform_pool(2, kSpec, {}), {}, cfg, kRates, 1200.0, 0, {true});
  REQUIRE_FALSE(r.actions.empty());
  std::size_t downs = 0, restores = 0;
  for (const auto& a : r.actions) {
    std::vector<TickRecord> mine;
    for (const auto& t : r.ticks) {
      if (t.gpu == a.gpu && t.time <= a.time) mine.push_back(t);
    }
    REQUIRE_FALSE(mine.empty());
    CHECK_EQ(mine.back().time, a.time);
    if (a.action == ControllerAction::downscale) {
      ++downs;
      CHECK_EQ(a.setting, FreqSetting::f_min_sm);
      const auto need = static_cast<std::size_t>(cfg.trigger_threshold / cfg.period) + 1;
      REQUIRE_GE(mine.size(), need);
      for (std::size_t k = mine.size() - need; k < mine.size(); ++k) CHECK(mine[k].low_activity);
    } else {
      ++restores;
      CHECK_EQ(a.action, ControllerAction::restore);
      CHECK_EQ(a.setting, FreqSetting::f_max);
      CHECK_FALSE(mine.back().low_activity);
    }
  }
  CHECK_GT(downs, 0u);
  CHECK_GT(restores, 0u);
  CHECK_LE(downs - restores, r.gpus.size());
}

TEST_CASE("a downscaled GPU restores on the next tick after a request lands")
{
  PowerModel pm;
  // Idle until 10.5 s; downscale fires at t=4 and lands at 4.25.
  const std::vector<Request> reqs = {{10.5, 1000, 100, 0}};
  const auto r = run_simulation(reqs, uniform_pool(1, kSpec, pm), {}, controller(FreqSetting::f_min_sm), kRates, 30.0);
  REQUIRE_GE(r.actions.size(), 2u);
  CHECK_EQ(r.actions[0].time, 4.0);
  CHECK_EQ(r.actions[0].action, ControllerAction::downscale);
  CHECK_EQ(r.actions[1].time, 11.0);
  CHECK_EQ(r.actions[1].action, ControllerAction::restore);
  // 0.75 s at 1/1.3 speed until 11.25, then the rest at f_max.
  const double done_at_slow = 0.75 / 1.3;
  const double expected = 0.75 + (1.5 - done_at_slow);
  CHECK(r.requests[0].latency == doctest::Approx(expected).epsilon(1e-6));
  CHECK_GT(r.requests[0].latency, 1.5);
}

TEST_CASE("simulation is deterministic and ignores the seed")
{
  const auto reqs = bursty(3, 900.0);
  const auto pool = uniform_pool(2, kSpec, {});
  const auto a = run_simulation(reqs, pool, {}, controller(FreqSetting::f_min_sm_mem), kRates, 900.0, 1);
  const auto b = run_simulation(reqs, pool, {}, controller(FreqSetting::f_min_sm_mem), kRates, 900.0, 1);
  const auto c = run_simulation(reqs, pool, {}, controller(FreqSetting::f_min_sm_mem), kRates, 900.0, 99);
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("comparing a configuration with itself gives unit ratios")
{
  const auto reqs = bursty(4, 600.0);
  const SimScenario base{"base", {}, std::nullopt};
  const auto rows = compare_policies(reqs, uniform_pool(2, kSpec, {}), {base, base}, kRates, 600.0);
  REQUIRE_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    CHECK_EQ(row.energy_ratio, 1.0);
    CHECK_EQ(row.p95_ratio, 1.0);
    CHECK_EQ(row.busy_ratio, 1.0);
  }
}

TEST_CASE("the controller never increases energy")
{
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    const auto reqs = bursty(seed, 900.0);
    const auto pool = uniform_pool(2, kSpec, {});
    const auto base = run_simulation(reqs, pool, {}, std::nullopt, kRates, 900.0);
    for (auto target : {FreqSetting::f_min_sm, FreqSetting::f_min_sm_mem}) {
      const auto ctl = run_simulation(reqs, pool, {}, controller(target), kRates, 900.0);
      CHECK_LE(ctl.total_energy, base.total_energy);
      CHECK_GE(ctl.p95_latency, base.p95_latency);
    }
  }
}

TEST_CASE("lowering reduced-clock idle power lowers energy")
{
  const auto reqs = bursty(5, 900.0);
  PowerModel pm;
  const auto hi = run_simulation(reqs, uniform_pool(1, kSpec, pm), {}, controller(FreqSetting::f_min_sm), kRates, 900.0);
  pm.p_exec_idle[1] = 50.0;
  const auto lo = run_simulation(reqs, uniform_pool(1, kSpec, pm), {}, controller(FreqSetting::f_min_sm), kRates, 900.0);
  CHECK(lo.actions == hi.actions);
  CHECK_LT(lo.total_energy, hi.total_energy);

  PowerModel base;
  const auto e1 = run_simulation(reqs, uniform_pool(1, kSpec, base), {}, std::nullopt, kRates, 900.0).total_energy;
  base.p_exec_idle[0] = 90.0;
  const auto e2 = run_simulation(reqs, uniform_pool(1, kSpec, base), {}, std::nullopt, kRates, 900.0).total_energy;
  CHECK_LT(e2, e1);
}

TEST_CASE("a larger memory-clock slowdown never shortens a request")
{
  // Isolated requests: each one lands on a downscaled GPU, so the action
  // sequence is the same for every slowdown.
  Rng rng(6);
  std::vector<Request> reqs;
  for (int i = 0; i < 40; ++i) {
    reqs.push_back({20.0 + 30.0 * i + std::round(rng.uniform(0.0, 1.0) * 1000.0) / 1000.0, rng.uniform_int(200, 1200),
                    rng.uniform_int(20, 120), i});
  }
  PowerModel pm;
  const auto run = [&] {
    return run_simulation(reqs, uniform_pool(1, kSpec, pm), {}, controller(FreqSetting::f_min_sm_mem), kRates, 1300.0);
  };
  auto prev = run();
  for (double s : {3.0, 4.0, 6.0}) {
    pm.slowdown[2] = s;
    const auto next = run();
    CHECK_EQ(next.actions.size(), prev.actions.size());
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      REQUIRE(next.requests[i].completed);
      CHECK_GE(next.requests[i].latency, prev.requests[i].latency);
    }
    prev = next;
  }
}
