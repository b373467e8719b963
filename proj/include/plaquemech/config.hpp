#pragma once

// Run configuration: every tunable of the pipeline under a namespaced key.
//
// Text form is one `key = value` per line; `#` starts a comment. Unknown keys
// are rejected. Layering is defaults < case config.txt < --config file <
// --set overrides, applied by calling `apply_text` / `set` in that order.

#include <array>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "plaquemech/constitutive.hpp"
#include "plaquemech/error.hpp"
#include "plaquemech/mesh.hpp"
#include "plaquemech/text.hpp"

namespace plaquemech {

struct GmmConfig {
  std::array<double, 4> initial_means{20.0, 90.0, 180.0, 500.0};  // HU, ascending
  double variance_floor = 1.0;                                    // HU^2
  double weight_epsilon = 1e-6;
  double tol = 1e-6;  // on the mean log-likelihood
  int max_iter = 500;
  int kmeans_max_iter = 100;
  double histogram_bin = 5.0;  // HU
};

struct MeshConfig {
  double t_media = 0.32;  // mm
  double t_adv = 0.34;    // mm
  int n_sectors = 128;
  MeshRings rings{8, 4, 4};
};

struct LoadConfig {
  std::string mode = "mean_radius";  // mean_radius | pressure
  double inflate_factor = 1.1;       // target mean lumen radius / reference
  double pressure_kpa = 10.0;        // used when mode = pressure
  int inflate_steps = 5;
  int unload_steps = 5;
  bool stent = true;
  double stent_factor = 1.05;        // stent radius / reference mean lumen radius
  double k_penalty = 1e3;            // kPa/mm
  double outer_spring_stiffness = 10.0;  // kPa/mm
};

struct SolverConfig {
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  int max_iter = 25;
  int max_line_search = 10;
  int max_halvings = 4;
  double radius_tol = 1e-10;
  double penetration_tol = 1e-4;
  int max_augmentations = 60;
};

struct AnalysisConfig {
  std::string layers = "all";  // all | intima
  double tau_min = 5.0;        // kPa
  double tau_max = 100.0;
  double tau_step = 5.0;
  double light_quantile = 0.80;
  double dark_quantile = 0.95;

  /// tau_min, tau_min + step, ... up to tau_max (inclusive within 1e-9).
  std::vector<double> thresholds() const {
    std::vector<double> out;
    for (int i = 0;; ++i) {
      const double t = tau_min + i * tau_step;
      if (t > tau_max + 1e-9 * std::max(1.0, std::abs(tau_max))) break;
      out.push_back(t);
    }
    return out;
  }
};

struct CorrelateConfig {
  std::string pooling = "raw";  // raw | centered
  bool rescale = false;
  int reference_index = 0;
  double reference_diameter_mm = 3.0;
};

struct MorphologyConfig {
  double lumen_radius = 1.5;       // mm
  double intima_thickness = 0.5;   // mm
  double block_arc = 90.0;         // deg
  double opposing_arc = 60.0;      // deg
  double circumferential_arc = 270.0;
};

struct RunConfig {
  GmmConfig gmm;
  MeshConfig mesh;
  MaterialTable materials = MaterialTable::defaults();
  LoadConfig load;
  SolverConfig solver;
  AnalysisConfig analysis;
  CorrelateConfig correlate;
  MorphologyConfig morphology;

  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static std::vector<std::string> keys();

  /// Applies a config text; `source` names it in errors.
  void apply_text(std::string_view content, std::string_view source);

  /// Canonical echo: every key, sorted, shortest round-trip numbers.
  std::string to_text() const;

  void validate() const;
};

namespace detail {

struct ConfigEntry {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

inline double config_double(std::string_view key, std::string_view v) {
  return text::parse_double(v, key, ErrorCode::ConfigParse);
}

inline int config_int(std::string_view key, std::string_view v) {
  return text::parse_int<int>(v, key, ErrorCode::ConfigParse);
}

inline bool config_bool(std::string_view key, std::string_view v) {
  v = text::trim(v);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorCode::ConfigParse, std::string(key) + ": expected true or false");
}

// Accessors take a mutable RunConfig; getters only read through them.
inline const std::map<std::string, ConfigEntry, std::less<>>& config_registry() {
  static const auto registry = [] {
    std::map<std::string, ConfigEntry, std::less<>> r;
    auto dbl = [&r](std::string key, auto member) {
      r[key] = {[member](const RunConfig& c) { return text::format_double(member(const_cast<RunConfig&>(c))); },
                [member, key](RunConfig& c, std::string_view v) { member(c) = config_double(key, v); }};
    };
    auto integer = [&r](std::string key, auto member) {
      r[key] = {[member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                [member, key](RunConfig& c, std::string_view v) { member(c) = config_int(key, v); }};
    };
    auto boolean = [&r](std::string key, auto member) {
      r[key] = {[member](const RunConfig& c) {
                  return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
                },
                [member, key](RunConfig& c, std::string_view v) { member(c) = config_bool(key, v); }};
    };
    auto choice = [&r](std::string key, auto member, std::initializer_list<std::string_view> allowed) {
      std::vector<std::string_view> opts(allowed);
      r[key] = {[member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
                [member, key, opts](RunConfig& c, std::string_view v) {
                  v = text::trim(v);
                  for (auto a : opts)
                    if (a == v) {
                      member(c) = std::string(v);
                      return;
                    }
                  throw Error(ErrorCode::ConfigParse, key + ": unsupported value '" + std::string(v) + "'");
                }};
    };

    static constexpr std::array<const char*, 4> kMeanKeys{"lipid_rich", "fibrotic", "normal_intima", "calcification"};
    for (std::size_t i = 0; i < 4; ++i)
      dbl(std::string("gmm.initial_mean.") + kMeanKeys[i], [i](RunConfig& c) -> double& { return c.gmm.initial_means[i]; });
    dbl("gmm.variance_floor", [](RunConfig& c) -> double& { return c.gmm.variance_floor; });
    dbl("gmm.weight_epsilon", [](RunConfig& c) -> double& { return c.gmm.weight_epsilon; });
    dbl("gmm.tol", [](RunConfig& c) -> double& { return c.gmm.tol; });
    integer("gmm.max_iter", [](RunConfig& c) -> int& { return c.gmm.max_iter; });
    integer("gmm.kmeans_max_iter", [](RunConfig& c) -> int& { return c.gmm.kmeans_max_iter; });
    dbl("gmm.histogram_bin", [](RunConfig& c) -> double& { return c.gmm.histogram_bin; });

    dbl("mesh.t_media", [](RunConfig& c) -> double& { return c.mesh.t_media; });
    dbl("mesh.t_adv", [](RunConfig& c) -> double& { return c.mesh.t_adv; });
    integer("mesh.n_sectors", [](RunConfig& c) -> int& { return c.mesh.n_sectors; });
    integer("mesh.rings.intima", [](RunConfig& c) -> int& { return c.mesh.rings.intima; });
    integer("mesh.rings.media", [](RunConfig& c) -> int& { return c.mesh.rings.media; });
    integer("mesh.rings.adventitia", [](RunConfig& c) -> int& { return c.mesh.rings.adventitia; });

    for (auto tissue : kAllTissues) {
      const std::string base = "material." + std::string(name_of(tissue)) + ".";
      const auto idx = index_of(tissue);
      dbl(base + "E", [idx](RunConfig& c) -> double& { return c.materials.params[idx].E_mpa; });
      dbl(base + "nu", [idx](RunConfig& c) -> double& { return c.materials.params[idx].nu; });
      dbl(base + "k1", [idx](RunConfig& c) -> double& { return c.materials.params[idx].k1_kpa; });
      dbl(base + "k2", [idx](RunConfig& c) -> double& { return c.materials.params[idx].k2; });
      dbl(base + "phi", [idx](RunConfig& c) -> double& { return c.materials.params[idx].phi_deg; });
      boolean(base + "has_fibers", [idx](RunConfig& c) -> bool& { return c.materials.params[idx].has_fibers; });
    }

    choice("load.mode", [](RunConfig& c) -> std::string& { return c.load.mode; }, {"mean_radius", "pressure"});
    dbl("load.inflate_factor", [](RunConfig& c) -> double& { return c.load.inflate_factor; });
    dbl("load.pressure_kpa", [](RunConfig& c) -> double& { return c.load.pressure_kpa; });
    integer("load.inflate_steps", [](RunConfig& c) -> int& { return c.load.inflate_steps; });
    integer("load.unload_steps", [](RunConfig& c) -> int& { return c.load.unload_steps; });
    boolean("load.stent", [](RunConfig& c) -> bool& { return c.load.stent; });
    dbl("load.stent_factor", [](RunConfig& c) -> double& { return c.load.stent_factor; });
    dbl("load.k_penalty", [](RunConfig& c) -> double& { return c.load.k_penalty; });
    dbl("load.outer_spring_stiffness", [](RunConfig& c) -> double& { return c.load.outer_spring_stiffness; });

    dbl("solver.abs_tol", [](RunConfig& c) -> double& { return c.solver.abs_tol; });
    dbl("solver.rel_tol", [](RunConfig& c) -> double& { return c.solver.rel_tol; });
    integer("solver.max_iter", [](RunConfig& c) -> int& { return c.solver.max_iter; });
    integer("solver.max_line_search", [](RunConfig& c) -> int& { return c.solver.max_line_search; });
    integer("solver.max_halvings", [](RunConfig& c) -> int& { return c.solver.max_halvings; });
    dbl("solver.radius_tol", [](RunConfig& c) -> double& { return c.solver.radius_tol; });
    dbl("solver.penetration_tol", [](RunConfig& c) -> double& { return c.solver.penetration_tol; });
    integer("solver.max_augmentations", [](RunConfig& c) -> int& { return c.solver.max_augmentations; });

    choice("analysis.layers", [](RunConfig& c) -> std::string& { return c.analysis.layers; }, {"all", "intima"});
    dbl("analysis.tau_min", [](RunConfig& c) -> double& { return c.analysis.tau_min; });
    dbl("analysis.tau_max", [](RunConfig& c) -> double& { return c.analysis.tau_max; });
    dbl("analysis.tau_step", [](RunConfig& c) -> double& { return c.analysis.tau_step; });
    dbl("analysis.light_quantile", [](RunConfig& c) -> double& { return c.analysis.light_quantile; });
    dbl("analysis.dark_quantile", [](RunConfig& c) -> double& { return c.analysis.dark_quantile; });

    choice("correlate.pooling", [](RunConfig& c) -> std::string& { return c.correlate.pooling; },
           {"raw", "centered"});
    boolean("correlate.rescale", [](RunConfig& c) -> bool& { return c.correlate.rescale; });
    integer("correlate.reference_index", [](RunConfig& c) -> int& { return c.correlate.reference_index; });
    dbl("correlate.reference_diameter_mm", [](RunConfig& c) -> double& { return c.correlate.reference_diameter_mm; });

    dbl("morphology.lumen_radius", [](RunConfig& c) -> double& { return c.morphology.lumen_radius; });
    dbl("morphology.intima_thickness", [](RunConfig& c) -> double& { return c.morphology.intima_thickness; });
    dbl("morphology.block_arc", [](RunConfig& c) -> double& { return c.morphology.block_arc; });
    dbl("morphology.opposing_arc", [](RunConfig& c) -> double& { return c.morphology.opposing_arc; });
    dbl("morphology.circumferential_arc", [](RunConfig& c) -> double& { return c.morphology.circumferential_arc; });
    return r;
  }();
  return registry;
}

inline const ConfigEntry& config_entry(std::string_view key) {
  const auto& reg = config_registry();
  const auto it = reg.find(key);
  if (it == reg.end()) throw Error(ErrorCode::UnknownConfigKey, "unknown config key '" + std::string(key) + "'");
  return it->second;
}

}  // namespace detail

inline void RunConfig::set(std::string_view key, std::string_view value) {
  detail::config_entry(text::trim(key)).set(*this, value);
}

inline std::string RunConfig::get(std::string_view key) const { return detail::config_entry(key).get(*this); }

inline std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : detail::config_registry()) out.push_back(k);
  return out;
}

inline void RunConfig::apply_text(std::string_view content, std::string_view source) {
  std::size_t line_no = 0;
  for (auto line : text::split(content, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::ConfigParse,
                  std::string(source) + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      set(text::trim(line.substr(0, eq)), text::trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(e.code(), std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, entry] : detail::config_registry()) out += k + " = " + entry.get(*this) + "\n";
  return out;
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigParse, msg); };
  for (std::size_t i = 1; i < 4; ++i)
    if (!(gmm.initial_means[i] > gmm.initial_means[i - 1])) fail("gmm.initial_mean.* must be strictly ascending");
  if (!(gmm.variance_floor > 0.0)) fail("gmm.variance_floor must be > 0");
  if (!(gmm.weight_epsilon > 0.0 && gmm.weight_epsilon < 0.25)) fail("gmm.weight_epsilon must lie in (0, 0.25)");
  if (!(gmm.tol > 0.0)) fail("gmm.tol must be > 0");
  if (gmm.max_iter < 1 || gmm.kmeans_max_iter < 1) fail("gmm iteration caps must be >= 1");
  if (!(gmm.histogram_bin > 0.0)) fail("gmm.histogram_bin must be > 0");
  if (!(mesh.t_media > 0.0 && mesh.t_adv > 0.0)) fail("mesh layer thicknesses must be > 0");
  if (mesh.n_sectors < 8) fail("mesh.n_sectors must be >= 8");
  if (mesh.rings.intima < 1 || mesh.rings.media < 1 || mesh.rings.adventitia < 1) fail("mesh.rings.* must be >= 1");
  for (auto t : kAllTissues) materials[t].validate("material." + std::string(name_of(t)));
  if (!(load.inflate_factor > 0.0 && load.stent_factor > 0.0)) fail("load factors must be > 0");
  if (!(load.pressure_kpa >= 0.0)) fail("load.pressure_kpa must be >= 0");
  if (load.inflate_steps < 1 || load.unload_steps < 1) fail("load steps must be >= 1");
  if (!(load.k_penalty > 0.0)) fail("load.k_penalty must be > 0");
  if (!(load.outer_spring_stiffness >= 0.0)) fail("load.outer_spring_stiffness must be >= 0");
  if (!(solver.abs_tol > 0.0 && solver.rel_tol >= 0.0 && solver.radius_tol > 0.0 && solver.penetration_tol > 0.0))
    fail("solver tolerances must be positive");
  if (solver.max_iter < 1 || solver.max_line_search < 0 || solver.max_halvings < 0 || solver.max_augmentations < 0)
    fail("solver iteration caps out of range");
  if (!(analysis.tau_step > 0.0 && analysis.tau_max >= analysis.tau_min)) fail("analysis threshold grid is empty");
  if (!(analysis.light_quantile > 0.0 && analysis.light_quantile <= 1.0 && analysis.dark_quantile > 0.0 &&
        analysis.dark_quantile <= 1.0))
    fail("analysis quantiles must lie in (0, 1]");
  if (correlate.reference_index < 0) fail("correlate.reference_index must be >= 0");
  if (!(correlate.reference_diameter_mm > 0.0)) fail("correlate.reference_diameter_mm must be > 0");
  if (!(morphology.lumen_radius > 0.0 && morphology.intima_thickness > 0.0)) fail("morphology geometry must be > 0");
}

}  // namespace plaquemech
