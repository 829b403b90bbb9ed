#pragma once

// Execution-idle-aware frequency control: count consecutive low-activity
// control periods, drop to a reduced clock once the count exceeds the trigger
// threshold, restore on the first active period and then hold f_max for a
// cooldown.

#include <stdexcept>
#include <string_view>

#include "xidle/classifier.hpp"
#include "xidle/replay.hpp"
#include "xidle/telemetry.hpp"

namespace xidle {

struct ControllerConfig {
  double trigger_threshold = 3.0;  ///< s of accumulated idle before downscaling
  double cooldown = 5.0;           ///< s to hold f_max after a restore
  double period = 1.0;             ///< control period, s
  FreqSetting target = FreqSetting::f_min_sm;

  void validate() const
  {
    if (!(period > 0.0) || !(trigger_threshold >= period) || !(cooldown >= 0.0)) {
      throw std::invalid_argument("controller config: need trigger_threshold >= period > 0 and cooldown >= 0");
    }
    if (target == FreqSetting::f_max) throw std::invalid_argument("controller target must be a reduced setting");
  }
};

struct ControllerState {
  double idle_accum = 0.0;      ///< s
  double cooldown_until = 0.0;  ///< s
  bool downscaled = false;

  friend bool operator==(const ControllerState&, const ControllerState&) = default;
};

enum class ControllerAction { none, downscale, restore };

inline std::string_view to_string(ControllerAction a)
{
  switch (a) {
    case ControllerAction::none: return "none";
    case ControllerAction::downscale: return "downscale";
    case ControllerAction::restore: return "restore";
  }
  return "none";
}

struct ControllerStep {
  ControllerState state;
  ControllerAction action = ControllerAction::none;
};

/// One control period ending at time t.
inline ControllerStep controller_step(const ControllerState& in, const ControllerConfig& cfg, double t,
                                      bool low_activity)
{
  ControllerStep out{in, ControllerAction::none};
  auto& s = out.state;
  if (low_activity) {
    s.idle_accum += cfg.period;
  } else {
    s.idle_accum = 0.0;
    if (s.downscaled) {
      s.downscaled = false;
      s.cooldown_until = t + cfg.cooldown;
      out.action = ControllerAction::restore;
    }
  }
  if (s.idle_accum > cfg.trigger_threshold && t >= s.cooldown_until && !s.downscaled) {
    s.downscaled = true;
    out.action = ControllerAction::downscale;
  }
  return out;
}

/// Same step driven by a telemetry reading, using the classifier's
/// low-activity predicate.
inline ControllerStep controller_step(const ControllerState& in, const ControllerConfig& cfg, double t,
                                      const TelemetrySample& reading, const GpuModelSpec& spec,
                                      const ClassifierConfig& thresholds = {})
{
  return controller_step(in, cfg, t, is_low_activity(reading, spec, thresholds));
}

}  // namespace xidle
