#pragma once

// JSON replay configuration:
//
//   {"duration": 1800, "seed": 0,
//    "rates": {"prefill": 2000, "decode": 100},
//    "pool": {"size": 8, "gpu_name": "L40S", "power_model": {"p_exec_idle": [105, 61, 35], ...}},
//    "thin": {"keep_probability": 0.5, "seed": 1},
//    "configs": [{"name": "baseline", "policy": "balanced"},
//                {"name": "sm", "controller": {"target": "f_min_sm", "trigger_threshold": 3, "cooldown": 5}},
//                {"name": "pack2", "policy": "consolidate", "active_gpus": 2}]}

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xidle/catalog.hpp"
#include "xidle/controller.hpp"
#include "xidle/replay.hpp"
#include "xidle/simulator.hpp"

namespace xidle {

struct ThinSpec {
  double keep_probability = 1.0;
  std::uint64_t seed = 0;
};

struct SimConfig {
  double duration = kDefaultTraceHorizon;
  std::uint64_t seed = 0;
  ServiceRates rates;
  std::size_t pool_size = 1;
  std::string gpu_name = "L40S";
  PowerModel power;
  std::optional<ThinSpec> thin;
  std::vector<SimScenario> scenarios;

  Pool pool(const GpuCatalog& catalog) const { return uniform_pool(pool_size, catalog.lookup(gpu_name), power); }
};

inline bool valid_config_name(const std::string& name)
{
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
  });
}

inline SimConfig parse_sim_config(const nlohmann::json& j)
{
  SimConfig c;
  try {
    c.duration = j.value("duration", c.duration);
    c.seed = j.value("seed", c.seed);
    if (j.contains("rates")) {
      const auto& r = j.at("rates");
      c.rates.prefill = r.value("prefill", c.rates.prefill);
      c.rates.decode = r.value("decode", c.rates.decode);
    }
    if (j.contains("pool")) {
      const auto& p = j.at("pool");
      c.pool_size = p.value("size", c.pool_size);
      c.gpu_name = p.value("gpu_name", c.gpu_name);
      if (p.contains("power_model")) {
        const auto& m = p.at("power_model");
        c.power.p_deep = m.value("p_deep", c.power.p_deep);
        c.power.p_active = m.value("p_active", c.power.p_active);
        c.power.transition_latency = m.value("transition_latency", c.power.transition_latency);
        if (m.contains("p_exec_idle")) c.power.p_exec_idle = m.at("p_exec_idle").get<std::array<double, 3>>();
        if (m.contains("slowdown")) c.power.slowdown = m.at("slowdown").get<std::array<double, 3>>();
      }
    }
    if (j.contains("thin")) {
      const auto& t = j.at("thin");
      c.thin = ThinSpec{t.at("keep_probability").get<double>(), t.value("seed", std::uint64_t{0})};
    }
    for (const auto& s : j.at("configs")) {
      SimScenario sc;
      sc.name = s.at("name").get<std::string>();
      const auto policy = s.value("policy", std::string("balanced"));
      if (policy == "balanced") {
        sc.policy.kind = PolicyKind::balanced;
      } else if (policy == "consolidate") {
        sc.policy.kind = PolicyKind::consolidate;
        sc.policy.active_gpu_count = s.at("active_gpus").get<std::size_t>();
      } else {
        throw SimConfigError("unknown policy '" + policy + "'");
      }
      if (s.contains("controller") && !s.at("controller").is_null()) {
        const auto& k = s.at("controller");
        ControllerConfig cc;
        cc.trigger_threshold = k.value("trigger_threshold", cc.trigger_threshold);
        cc.cooldown = k.value("cooldown", cc.cooldown);
        cc.period = k.value("period", cc.period);
        cc.target = freq_from_string(k.value("target", std::string("f_min_sm")));
        cc.validate();
        sc.controller = cc;
      }
      if (!valid_config_name(sc.name)) throw SimConfigError("config name '" + sc.name + "' must match [A-Za-z0-9_-]+");
      c.scenarios.push_back(std::move(sc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SimConfigError(std::string("bad simulation config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SimConfigError(std::string("bad simulation config: ") + e.what());
  }
  if (c.scenarios.empty()) throw SimConfigError("simulation config lists no configs");
  if (c.pool_size < 1) throw SimConfigError("pool size must be >= 1");
  if (!(c.duration > 0.0)) throw SimConfigError("duration must be positive");
  c.power.validate();
  return c;
}

inline nlohmann::json sim_config_json(const SimConfig& c)
{
  nlohmann::json j;
  j["duration"] = c.duration;
  j["seed"] = c.seed;
  j["rates"] = {{"prefill", c.rates.prefill}, {"decode", c.rates.decode}};
  j["pool"] = {{"size", c.pool_size},
               {"gpu_name", c.gpu_name},
               {"power_model",
                {{"p_deep", c.power.p_deep},
                 {"p_exec_idle", c.power.p_exec_idle},
                 {"p_active", c.power.p_active},
                 {"slowdown", c.power.slowdown},
                 {"transition_latency", c.power.transition_latency}}}};
  if (c.thin) j["thin"] = {{"keep_probability", c.thin->keep_probability}, {"seed", c.thin->seed}};
  auto configs = nlohmann::json::array();
  for (const auto& s : c.scenarios) {
    nlohmann::json e{{"name", s.name}, {"policy", s.policy.kind == PolicyKind::balanced ? "balanced" : "consolidate"}};
    if (s.policy.kind == PolicyKind::consolidate) e["active_gpus"] = s.policy.active_gpu_count;
    if (s.controller) {
      e["controller"] = {{"trigger_threshold", s.controller->trigger_threshold},
                         {"cooldown", s.controller->cooldown},
                         {"period", s.controller->period},
                         {"target", std::string(to_string(s.controller->target))}};
    }
    configs.push_back(std::move(e));
  }
  j["configs"] = std::move(configs);
  return j;
}

}  // namespace xidle
