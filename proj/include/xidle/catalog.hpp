#pragma once

#include <fstream>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "xidle/telemetry.hpp"

namespace xidle {

/// GPU model catalog keyed by gpu_name.
class GpuCatalog {
public:
  void add(GpuModelSpec spec)
  {
    if (spec.gpu_name.empty()) throw std::invalid_argument("GPU model without a name");
    if (spec.tdp && spec.deep_idle_power && !(0.0 < *spec.deep_idle_power && *spec.deep_idle_power < *spec.tdp)) {
      throw std::invalid_argument("GPU model " + spec.gpu_name + ": need 0 < deep_idle_power < tdp");
    }
    if (spec.tdp && !(*spec.tdp > 0.0)) throw std::invalid_argument("GPU model " + spec.gpu_name + ": tdp must be positive");
    auto name = spec.gpu_name;
    models_.insert_or_assign(std::move(name), std::move(spec));
  }

  bool contains(const std::string& name) const { return models_.count(name) > 0; }

  /// Returns the catalog entry, or an empty spec carrying only the name.
  GpuModelSpec lookup(const std::string& name) const
  {
    const auto it = models_.find(name);
    if (it != models_.end()) return it->second;
    GpuModelSpec empty;
    empty.gpu_name = name;
    return empty;
  }

  const std::map<std::string, GpuModelSpec>& models() const { return models_; }

private:
  std::map<std::string, GpuModelSpec> models_;
};

namespace detail {

inline std::set<Signal> all_optional_signals_except(std::initializer_list<Signal> missing)
{
  std::set<Signal> out;
  for (std::size_t i = 0; i < kSignalCount; ++i) out.insert(static_cast<Signal>(i));
  for (auto s : missing) out.erase(s);
  return out;
}

}  // namespace detail

/// Built-in models. TDPs are the default driver power limits of the installed
/// fleet; deep-idle baselines are 35 W for L40S/L40 and estimates elsewhere.
inline GpuCatalog default_catalog()
{
  using detail::all_optional_signals_except;
  const auto no_nvlink = all_optional_signals_except({Signal::nvlink_tx, Signal::nvlink_rx});
  const auto full = all_optional_signals_except({});
  GpuCatalog c;
  c.add({"L40S", 400.0, 35.0, no_nvlink});
  c.add({"L40", 300.0, 35.0, no_nvlink});
  c.add({"RTX A6000", 300.0, 30.0, no_nvlink});
  c.add({"RTX 6000 Ada Generation", 300.0, 30.0, no_nvlink});
  c.add({"RTX PRO 6000", 600.0, 40.0, no_nvlink});
  c.add({"A100 80GB PCIe", 300.0, 45.0, full});
  c.add({"A100 40GB SXM4", 400.0, 55.0, full});
  c.add({"H100 SXM5", 700.0, 70.0, full});
  c.add({"H200 SXM", 700.0, 75.0, full});
  c.add({"B200", 1000.0, 140.0, full});
  return c;
}

/// Catalog JSON: {"models": [{"gpu_name": ..., "tdp": W, "deep_idle_power": W,
/// "available_signals": ["sm", ...]}]}. Entries replace built-in ones of the
/// same name when merged onto default_catalog().
inline void merge_catalog_json(GpuCatalog& catalog, const nlohmann::json& doc)
{
  for (const auto& m : doc.at("models")) {
    GpuModelSpec spec;
    spec.gpu_name = m.at("gpu_name").get<std::string>();
    if (m.contains("tdp")) spec.tdp = m.at("tdp").get<double>();
    if (m.contains("deep_idle_power")) spec.deep_idle_power = m.at("deep_idle_power").get<double>();
    if (m.contains("available_signals")) {
      for (const auto& n : m.at("available_signals")) {
        const auto sig = signal_from_name(n.get<std::string>());
        if (!sig) throw std::invalid_argument("unknown signal '" + n.get<std::string>() + "'");
        spec.available_signals.insert(*sig);
      }
    }
    catalog.add(std::move(spec));
  }
}

inline GpuCatalog load_catalog_file(const std::string& path, bool include_defaults = true)
{
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open catalog '" + path + "'");
  GpuCatalog c = include_defaults ? default_catalog() : GpuCatalog{};
  merge_catalog_json(c, nlohmann::json::parse(in));
  return c;
}

}  // namespace xidle
