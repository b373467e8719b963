#pragma once

// Pipeline stages behind the CLI subcommands. Each stage writes into its own
// output directory, echoes the effective config (config.txt) and a run
// manifest (manifest.json). Everything except the manifest is a pure
// function of the inputs and the config, whatever the thread count.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "plaquemech/case_io.hpp"
#include "plaquemech/config.hpp"
#include "plaquemech/export.hpp"
#include "plaquemech/fe_solver.hpp"
#include "plaquemech/isr_correlation.hpp"
#include "plaquemech/mesh.hpp"
#include "plaquemech/plaque_gmm.hpp"
#include "plaquemech/stress_analysis.hpp"
#include "plaquemech/svg_chart.hpp"

#ifndef PLAQUEMECH_VERSION
#define PLAQUEMECH_VERSION "0.1.0"
#endif

namespace plaquemech::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kPartial = 1, kInputError = 2, kInternalError = 3 };

/// Config layers on top of a base: --config files in order, then --set pairs.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> texts;  // (content, source name)
  std::vector<std::pair<std::string, std::string>> sets;   // (key, value)

  void apply(RunConfig& cfg) const {
    for (const auto& [content, source] : texts) cfg.apply_text(content, source);
    for (const auto& [key, value] : sets) {
      try {
        cfg.set(key, value);
      } catch (const Error& e) {
        throw Error(e.code(), std::string("--set ") + e.what());
      }
    }
    cfg.validate();
  }
};

struct Options {
  Overrides overrides;
  int threads = 1;
};

/// Runs f(i) for i in [0, n) on `threads` workers pulling indices from a
/// shared counter. f must not throw.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& f) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) f(i);
  };
  const auto nt = static_cast<std::size_t>(std::max(1, threads));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(nt, n); ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Run record. Timings and thread counts live only here.
struct Manifest {
  json data;

  Manifest(std::string stage, int threads) {
    data["stage"] = std::move(stage);
    data["version"] = PLAQUEMECH_VERSION;
    data["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION);
    data["threads"] = threads;
    data["timings_s"] = json::object();
  }
  void time(const std::string& what, double s) { data["timings_s"][what] = s; }
};

inline void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::IoFailure, "cannot create directory " + dir.string());
}

inline void finish(const fs::path& out, const RunConfig& cfg, const Manifest& m) {
  text::write_file(out / "config.txt", cfg.to_text());
  text::write_file(out / "manifest.json", m.data.dump(2) + "\n");
}

inline RunConfig case_config(const CaseBundle& b, const Overrides& o) {
  RunConfig cfg = b.config;
  o.apply(cfg);
  return cfg;
}

inline std::string slice_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "slice_%03zu", i);
  return buf;
}

// ---------------------------------------------------------------------------
// segment

struct SegmentResult {
  MixtureModel model;
  LabelVolume labels;
};

inline SegmentResult segment(const CaseBundle& b, const RunConfig& cfg) {
  const auto samples = masked_samples(b);
  SegmentResult r;
  r.model = fit_case(samples, cfg.gmm);
  r.labels = classify_volume(b, r.model);
  return r;
}

inline void write_segment(const fs::path& out, const CaseBundle& b, const RunConfig& cfg, const SegmentResult& r) {
  const auto samples = masked_samples(b);
  text::write_file(out / "model.csv", model_csv(r.model));
  text::write_file(out / "histogram.csv", histogram_csv(samples, r.model, cfg.gmm.histogram_bin));
  std::string trace = "iteration,mean_log_likelihood\n";
  for (std::size_t i = 0; i < r.model.log_likelihood_history.size(); ++i)
    trace += std::to_string(i) + "," + text::format_double(r.model.log_likelihood_history[i]) + "\n";
  text::write_file(out / "em_trace.csv", trace);
  text::write_file(out / "labels.raw", std::string(r.labels.labels.begin(), r.labels.labels.end()));
  const auto h = r.labels.histogram();
  std::string comp = "component,voxels\n";
  for (std::size_t k = 0; k < kNumComponents; ++k)
    comp += std::string(name_of(kAllComponents[k])) + "," + std::to_string(h[k]) + "\n";
  text::write_file(out / "composition.csv", comp);
}

inline int cmd_segment(const fs::path& case_dir, const fs::path& out, const Options& opt) {
  Stopwatch total;
  Manifest man("segment", 1);
  const CaseBundle b = load_case(case_dir);
  const RunConfig cfg = case_config(b, opt.overrides);
  prepare_dir(out);
  Stopwatch fit;
  const auto r = segment(b, cfg);
  man.time("fit", fit.seconds());
  write_segment(out, b, cfg, r);
  man.data["em_iterations"] = r.model.iterations;
  man.data["status"] = "ok";
  man.time("total", total.seconds());
  finish(out, cfg, man);
  return kOk;
}

// ---------------------------------------------------------------------------
// mesh

/// Layered mesh of one slice with intima labels from the classified samples.
inline CrossSectionMesh slice_mesh(const CaseBundle& b, const RunConfig& cfg, const MixtureModel& model,
                                   std::size_t slice) {
  const auto samples = slice_samples(b, slice);
  std::vector<LabeledSample> labeled;
  labeled.reserve(samples.size());
  for (const auto& s : samples) labeled.push_back({s.position, classify(model, s.hu)});
  const auto& c = b.contours.slices.at(slice);
  validate_contour_pair(c.lumen, c.outer, "slice " + std::to_string(slice));
  CrossSectionMesh mesh =
      build_slice_mesh(c.lumen, c.outer, cfg.mesh.t_media, cfg.mesh.t_adv, cfg.mesh.n_sectors, cfg.mesh.rings);
  return assign_regions(std::move(mesh), labeled);
}

struct SliceFailure {
  std::size_t slice = 0;
  ErrorCode code = ErrorCode::InvariantViolation;
  std::string message;
};

inline std::string failure_code_name(const SliceFailure& f) { return std::string(to_string(f.code)); }

inline MixtureModel model_for(const CaseBundle& b, const RunConfig& cfg, const std::optional<fs::path>& model_csv_path) {
  if (model_csv_path) return parse_model_csv(text::read_file(*model_csv_path), model_csv_path->filename().string());
  return fit_case(masked_samples(b), cfg.gmm);
}

inline int cmd_mesh(const fs::path& case_dir, const fs::path& out, const Options& opt,
                    const std::optional<fs::path>& model_path = std::nullopt) {
  Stopwatch total;
  const int threads = resolve_threads(opt.threads);
  Manifest man("mesh", threads);
  const CaseBundle b = load_case(case_dir);
  const RunConfig cfg = case_config(b, opt.overrides);
  prepare_dir(out);
  const MixtureModel model = model_for(b, cfg, model_path);

  const std::size_t n = b.num_slices();
  std::vector<std::optional<MeshQuality>> quality(n);
  std::vector<std::optional<SliceFailure>> failed(n);
  parallel_for(n, threads, [&](std::size_t i) {
    try {
      const auto mesh = slice_mesh(b, cfg, model, i);
      const fs::path dir = out / "slices" / slice_name(i);
      prepare_dir(dir);
      text::write_file(dir / "nodes.csv", io::nodes_csv(mesh));
      text::write_file(dir / "elements.csv", io::elements_csv(mesh));
      text::write_file(dir / "mesh.vtk", io::vtk(mesh));
      quality[i] = mesh_quality(mesh);
    } catch (const Error& e) {
      failed[i] = SliceFailure{i, e.code(), e.what()};
    } catch (const std::exception& e) {
      failed[i] = SliceFailure{i, ErrorCode::IoFailure, e.what()};
    }
  });

  std::string table = "slice,status,min_jacobian,max_aspect_ratio,total_area,error\n";
  std::size_t n_failed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (quality[i]) {
      table += std::to_string(i) + ",ok," + text::format_double(quality[i]->min_jacobian) + "," +
               text::format_double(quality[i]->max_aspect_ratio) + "," + text::format_double(quality[i]->total_area) +
               ",\n";
    } else {
      ++n_failed;
      table += std::to_string(i) + ",failed,,,," + failure_code_name(*failed[i]) + "\n";
    }
  }
  text::write_file(out / "slices.csv", table);
  man.data["slices"] = n;
  man.data["failed"] = n_failed;
  man.data["status"] = n_failed ? "partial" : "ok";
  man.time("total", total.seconds());
  finish(out, cfg, man);
  return n_failed ? kPartial : kOk;
}

// ---------------------------------------------------------------------------
// simulate

inline fe::SolverSettings solver_settings(const SolverConfig& c) {
  fe::SolverSettings s;
  s.abs_tol = c.abs_tol;
  s.rel_tol = c.rel_tol;
  s.max_iter = c.max_iter;
  s.max_line_search = c.max_line_search;
  s.max_halvings = c.max_halvings;
  s.radius_tol = c.radius_tol;
  s.penetration_tol = c.penetration_tol;
  s.max_augmentations = c.max_augmentations;
  return s;
}

/// Balloon inflation then withdrawal, with the stent left behind when
/// configured. Radii are relative to the reference mean lumen radius r0.
inline fe::LoadProgram load_program(const LoadConfig& c, double r0) {
  fe::LoadProgram p;
  p.outer_spring_stiffness = c.outer_spring_stiffness;
  if (c.mode == "pressure") p.phases.push_back(fe::InflateToPressure{c.pressure_kpa, c.inflate_steps});
  else p.phases.push_back(fe::InflateToMeanRadius{c.inflate_factor * r0, c.inflate_steps});
  fe::Unload unload{c.unload_steps, std::nullopt};
  if (c.stent) unload.stent = fe::Stent{c.stent_factor * r0, c.k_penalty};
  p.phases.push_back(unload);
  return p;
}

struct SliceSimulation {
  CrossSectionMesh mesh;
  fe::ProgramResult result;
  double reference_radius = 0.0;
  double max_penetration = 0.0;
};

inline SliceSimulation simulate_mesh(CrossSectionMesh mesh, const RunConfig& cfg) {
  fe::Model model(std::move(mesh), cfg.materials, cfg.load.outer_spring_stiffness);
  SliceSimulation out;
  out.reference_radius = model.mean_lumen_radius(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.num_dofs())));
  out.result = fe::run_program(model, load_program(cfg.load, out.reference_radius), solver_settings(cfg.solver));
  out.max_penetration = fe::max_penetration(model, out.result.state_residual);
  out.mesh = model.mesh();
  return out;
}

/// Homogeneous concentric annulus under 1 kPa against the plane-strain Lame
/// solution: inner hoop stress p (a^2 + b^2) / (b^2 - a^2).
struct LameCheck {
  double computed = 0.0;
  double expected = 0.0;
  double rel_error = 0.0;
  bool pass = false;
};

inline LameCheck lame_self_test() {
  const double a = 1.5;
  const double b = 3.0;
  const auto lumen = geom::circle(Point2::Zero(), a, 64);
  const auto outer = geom::circle(Point2::Zero(), 2.0, 64);
  auto mesh = build_slice_mesh(lumen, outer, 0.5, 0.5, 64, {4, 4, 4});
  std::fill(mesh.element_material.begin(), mesh.element_material.end(), Tissue::NormalIntima);
  const fe::Model model(mesh, MaterialTable::defaults(), 0.0);
  fe::LoadProgram prog;
  prog.outer_spring_stiffness = 0.0;
  prog.phases.push_back(fe::InflateToPressure{1.0, 1});
  const auto res = fe::run_program(model, prog);
  LameCheck c;
  c.computed = fe::mean_lumen_hoop_stress(model, res.state_max);
  c.expected = (a * a + b * b) / (b * b - a * a);
  c.rel_error = std::abs(c.computed - c.expected) / c.expected;
  c.pass = c.rel_error <= 0.02;
  return c;
}

struct SliceOutcome {
  std::optional<SliceSimulation> sim;
  std::optional<SliceStressSummary> residual;
  std::optional<SliceStressSummary> maximum;
  std::optional<SliceFailure> failure;
};

struct SimulateResult {
  std::vector<SliceOutcome> slices;
  std::size_t failed() const {
    std::size_t n = 0;
    for (const auto& s : slices) n += s.failure ? 1 : 0;
    return n;
  }
  /// Residual summaries of the converged slices, in slice order.
  std::vector<SliceStressSummary> residual_summaries() const {
    std::vector<SliceStressSummary> out;
    for (const auto& s : slices)
      if (s.residual) out.push_back(*s.residual);
    return out;
  }
};

inline void write_slice_dump(const fs::path& dir, const SliceSimulation& s) {
  prepare_dir(dir);
  text::write_file(dir / "nodes.csv", io::nodes_csv(s.mesh));
  text::write_file(dir / "elements.csv", io::elements_csv(s.mesh));
  text::write_file(dir / "displacement_max.csv", io::displacement_csv(s.result.state_max));
  text::write_file(dir / "displacement_residual.csv", io::displacement_csv(s.result.state_residual));
  text::write_file(dir / "gauss_max.csv", io::gauss_stress_csv(s.mesh, s.result.state_max));
  text::write_file(dir / "gauss_residual.csv", io::gauss_stress_csv(s.mesh, s.result.state_residual));
  text::write_file(dir / "newton.csv", io::newton_trace(s.result));
  text::write_file(dir / "residual.vtk", io::vtk(s.mesh, &s.result.state_residual));
}

/// Meshes, solves and summarizes every slice. A failing slice is recorded
/// and does not affect the others. Dumps go to out/slices/ when `out` is set.
inline SimulateResult simulate(const CaseBundle& b, const RunConfig& cfg, const MixtureModel& model, int threads,
                               const std::optional<fs::path>& out = std::nullopt) {
  const std::size_t n = b.num_slices();
  SimulateResult r;
  r.slices.resize(n);
  const auto thresholds = cfg.analysis.thresholds();
  const auto filter = layer_filter_from(cfg.analysis.layers);
  parallel_for(n, threads, [&](std::size_t i) {
    auto& o = r.slices[i];
    try {
      SliceSimulation sim = simulate_mesh(slice_mesh(b, cfg, model, i), cfg);
      const int idx = static_cast<int>(i);
      o.residual = slice_summary(sim.mesh, sim.result.state_residual, thresholds, filter, idx);
      o.maximum = slice_summary(sim.mesh, sim.result.state_max, thresholds, filter, idx);
      if (out) write_slice_dump(*out / "slices" / slice_name(i), sim);
      o.sim = std::move(sim);
    } catch (const Error& e) {
      o = {};
      o.failure = SliceFailure{i, e.code(), e.what()};
    } catch (const std::exception& e) {
      o = {};
      o.failure = SliceFailure{i, ErrorCode::IoFailure, e.what()};
    }
  });
  return r;
}

inline std::string slices_table(const SimulateResult& r) {
  std::string t =
      "slice,status,elements,reference_radius_mm,max_penetration_mm,newton_evaluations,error_code,error\n";
  for (std::size_t i = 0; i < r.slices.size(); ++i) {
    const auto& s = r.slices[i];
    if (s.sim) {
      std::size_t evals = 0;
      for (const auto& rec : s.sim->result.trace) evals += rec.residuals.size();
      t += std::to_string(i) + ",ok," + std::to_string(s.sim->mesh.num_elements()) + "," +
           text::format_double(s.sim->reference_radius) + "," + text::format_double(s.sim->max_penetration) + "," +
           std::to_string(evals) + ",,\n";
    } else {
      std::string msg = s.failure->message;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      t += std::to_string(i) + ",failed,,,,," + failure_code_name(*s.failure) + "," + msg + "\n";
    }
  }
  return t;
}

inline void write_simulate(const fs::path& out, const RunConfig& cfg, const SimulateResult& r) {
  const auto thresholds = cfg.analysis.thresholds();
  std::vector<SliceStressSummary> maxima;
  for (const auto& s : r.slices)
    if (s.maximum) maxima.push_back(*s.maximum);
  text::write_file(out / "summary.csv", summary_csv(r.residual_summaries(), thresholds));
  text::write_file(out / "summary_max.csv", summary_csv(maxima, thresholds));
  text::write_file(out / "slices.csv", slices_table(r));
}

inline json lame_json(const LameCheck& c) {
  json j;
  j["inner_hoop_kpa"] = c.computed;
  j["expected_kpa"] = c.expected;
  j["rel_error"] = c.rel_error;
  j["pass"] = c.pass;
  return j;
}

inline int cmd_simulate(const fs::path& case_dir, const fs::path& out, const Options& opt,
                        const std::optional<fs::path>& model_path = std::nullopt) {
  Stopwatch total;
  const int threads = resolve_threads(opt.threads);
  Manifest man("simulate", threads);
  const CaseBundle b = load_case(case_dir);
  const RunConfig cfg = case_config(b, opt.overrides);
  prepare_dir(out);

  Stopwatch st;
  const LameCheck lame = lame_self_test();
  man.time("self_test", st.seconds());
  text::write_file(out / "self_test.json", lame_json(lame).dump(2) + "\n");

  const MixtureModel model = model_for(b, cfg, model_path);
  Stopwatch solve;
  const auto r = simulate(b, cfg, model, threads, out);
  man.time("slices", solve.seconds());
  write_simulate(out, cfg, r);

  man.data["self_test_pass"] = lame.pass;
  man.data["slices"] = r.slices.size();
  man.data["failed"] = r.failed();
  man.data["status"] = r.failed() ? "partial" : "ok";
  man.time("total", total.seconds());
  finish(out, cfg, man);
  return r.failed() || !lame.pass ? kPartial : kOk;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeResult {
  std::vector<SliceStressSummary> summaries;
  std::pair<double, double> thresholds{0.0, 0.0};  // light, dark (kPa)
  std::vector<std::vector<io::GaussStressRow>> fields;
  std::vector<int> slice_index;
};

inline AnalyzeResult analyze_fields(std::vector<std::vector<io::GaussStressRow>> fields, std::vector<int> slice_index,
                                    const RunConfig& cfg) {
  const auto filter = layer_filter_from(cfg.analysis.layers);
  AnalyzeResult r;
  std::vector<std::vector<StressSample>> samples;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    std::vector<StressSample> s;
    for (const auto& row : fields[k])
      if (filter == LayerFilter::All || row.layer == Layer::Intima) s.push_back({row.p1, row.area});
    r.summaries.push_back(summarize(s, cfg.analysis.thresholds(), slice_index[k]));
    samples.push_back(std::move(s));
  }
  r.thresholds = global_percentile_thresholds(samples, {cfg.analysis.light_quantile, cfg.analysis.dark_quantile});
  r.fields = std::move(fields);
  r.slice_index = std::move(slice_index);
  return r;
}

inline svg::Chart slice_profile_chart(const std::vector<SliceStressSummary>& summaries, std::size_t n_slices,
                                      const std::string& title) {
  svg::Chart c;
  c.title = title;
  c.x_label = "slice";
  c.y_label = "first principal stress (kPa)";
  svg::Series mean{"mean", {}, {}, "#1f77b4"};
  svg::Series p95{"p95", {}, {}, "#d62728"};
  for (std::size_t i = 0; i < n_slices; ++i) {
    mean.x.push_back(static_cast<double>(i));
    p95.x.push_back(static_cast<double>(i));
    std::optional<double> m;
    std::optional<double> p;
    for (const auto& s : summaries)
      if (s.slice_index == static_cast<int>(i)) {
        m = s.mean_p1;
        p = s.p95_p1;
      }
    mean.y.push_back(m);
    p95.y.push_back(p);
  }
  c.series = {mean, p95};
  return c;
}

/// Reads the residual Gauss dumps of a simulate directory.
inline AnalyzeResult analyze_dir(const fs::path& sim_dir, const RunConfig& cfg, std::size_t* n_slices = nullptr) {
  const auto table = text::read_csv(sim_dir / "slices.csv");
  const auto c_slice = table.column("slice", "slices.csv");
  const auto c_status = table.column("status", "slices.csv");
  std::vector<std::vector<io::GaussStressRow>> fields;
  std::vector<int> index;
  for (const auto& row : table.rows) {
    if (row[c_status] != "ok") continue;
    const int i = text::parse_int<int>(row[c_slice], "slice");
    const fs::path file = sim_dir / "slices" / slice_name(static_cast<std::size_t>(i)) / "gauss_residual.csv";
    fields.push_back(io::parse_gauss_stress_csv(text::read_file(file), file.string()));
    index.push_back(i);
  }
  if (n_slices) *n_slices = table.rows.size();
  if (fields.empty()) throw Error(ErrorCode::EmptyInput, sim_dir.string() + ": no converged slices to analyze");
  return analyze_fields(std::move(fields), std::move(index), cfg);
}

inline void write_analyze(const fs::path& out, const RunConfig& cfg, const AnalyzeResult& r, std::size_t n_slices) {
  const auto filter = layer_filter_from(cfg.analysis.layers);
  text::write_file(out / "summary.csv", summary_csv(r.summaries, cfg.analysis.thresholds()));
  json t;
  t["light_quantile"] = cfg.analysis.light_quantile;
  t["dark_quantile"] = cfg.analysis.dark_quantile;
  t["light_kpa"] = r.thresholds.first;
  t["dark_kpa"] = r.thresholds.second;
  text::write_file(out / "map_thresholds.json", t.dump(2) + "\n");

  std::string map = "slice,element,gp,p1,band\n";
  std::string bands = "slice,area_light,area_dark,total_area\n";
  for (std::size_t k = 0; k < r.fields.size(); ++k) {
    double light = 0.0;
    double dark = 0.0;
    double total = 0.0;
    std::vector<int> gp_counter;
    for (const auto& row : r.fields[k]) {
      if (filter == LayerFilter::Intima && row.layer != Layer::Intima) continue;
      const int band = stress_band(row.p1, r.thresholds);
      if (static_cast<std::size_t>(row.element) >= gp_counter.size())
        gp_counter.resize(static_cast<std::size_t>(row.element) + 1, 0);
      const int gp = gp_counter[static_cast<std::size_t>(row.element)]++;
      map += std::to_string(r.slice_index[k]) + "," + std::to_string(row.element) + "," + std::to_string(gp) + "," +
             text::format_double(row.p1) + "," + std::to_string(band) + "\n";
      total += row.area;
      if (band == 1) light += row.area;
      if (band == 2) dark += row.area;
    }
    bands += std::to_string(r.slice_index[k]) + "," + text::format_double(light) + "," + text::format_double(dark) +
             "," + text::format_double(total) + "\n";
  }
  text::write_file(out / "stress_map.csv", map);
  text::write_file(out / "band_areas.csv", bands);
  text::write_file(out / "stress_profile.svg",
                   svg::render(slice_profile_chart(r.summaries, n_slices, "Residual first principal stress per slice")));
}

inline int cmd_analyze(const fs::path& sim_dir, const fs::path& out, const Options& opt) {
  Stopwatch total;
  Manifest man("analyze", 1);
  RunConfig cfg;
  if (fs::is_regular_file(sim_dir / "config.txt"))
    cfg.apply_text(text::read_file(sim_dir / "config.txt"), (sim_dir / "config.txt").string());
  opt.overrides.apply(cfg);
  prepare_dir(out);
  std::size_t n_slices = 0;
  const auto r = analyze_dir(sim_dir, cfg, &n_slices);
  write_analyze(out, cfg, r, n_slices);
  man.data["slices_analyzed"] = r.summaries.size();
  man.data["status"] = "ok";
  man.time("total", total.seconds());
  finish(out, cfg, man);
  return kOk;
}

// ---------------------------------------------------------------------------
// correlate

struct CorrelateInput {
  std::string case_id;
  std::vector<SliceStressSummary> summaries;
  CenterlineProfile profile;
};

inline CorrelationReport correlate(const std::vector<CorrelateInput>& inputs, const RunConfig& cfg) {
  std::vector<CorrelationRow> rows;
  std::vector<std::string> skipped;
  for (const auto& in : inputs) {
    CenterlineProfile profile = in.profile;
    if (cfg.correlate.rescale)
      profile = rescale_profile(profile, static_cast<std::size_t>(cfg.correlate.reference_index),
                                cfg.correlate.reference_diameter_mm);
    auto part = correlation_rows(in.case_id, in.summaries, profile, &skipped);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (cfg.correlate.pooling == "centered") rows = center_per_case(std::move(rows));
  auto rep = threshold_sweep(std::move(rows), cfg.analysis.thresholds());
  rep.skipped = std::move(skipped);
  return rep;
}

inline svg::Chart sweep_chart(const CorrelationReport& rep) {
  svg::Chart c;
  c.title = "Correlation of area above threshold with restenosis";
  c.x_label = "stress threshold (kPa)";
  c.y_label = "Pearson r";
  c.y_range = std::pair{-1.0, 1.0};
  svg::Series s{"area fraction above threshold", {}, {}, "#1f77b4"};
  for (const auto& p : rep.sweep) {
    s.x.push_back(p.tau);
    s.y.push_back(p.r);
  }
  c.series = {s};
  if (rep.r_mean) c.lines.push_back({"mean stress", *rep.r_mean, "#7b3294", true});
  if (rep.r_p95) c.lines.push_back({"p95 stress", *rep.r_p95, "#7b3294", false});
  return c;
}

inline void write_correlate(const fs::path& out, const RunConfig& cfg, const CorrelationReport& rep) {
  text::write_file(out / "report.json", report_json(rep).dump(2) + "\n");
  text::write_file(out / "sweep.csv", sweep_csv(rep));
  text::write_file(out / "rows.csv", rows_csv(rep, cfg.analysis.thresholds()));
  text::write_file(out / "sweep.svg", svg::render(sweep_chart(rep)));
}

struct CorrelateSource {
  std::string case_id;
  fs::path summary;
  fs::path profiles;
};

inline int cmd_correlate(const std::vector<CorrelateSource>& sources, const fs::path& out, const Options& opt) {
  Stopwatch total;
  Manifest man("correlate", 1);
  RunConfig cfg;
  opt.overrides.apply(cfg);
  std::vector<CorrelateInput> inputs;
  for (const auto& s : sources)
    inputs.push_back({s.case_id, parse_summary_csv(text::read_file(s.summary), s.summary.string()),
                      read_profiles(s.profiles)});
  prepare_dir(out);
  const auto rep = correlate(inputs, cfg);
  write_correlate(out, cfg, rep);
  man.data["cases"] = sources.size();
  man.data["n_points"] = rep.n_points;
  man.data["status"] = "ok";
  man.time("total", total.seconds());
  finish(out, cfg, man);
  return kOk;
}

// ---------------------------------------------------------------------------
// morphology study

struct ScenarioResult {
  std::string name;
  SliceSimulation sim;
  double p95_residual_noncalc = 0.0;  // non-calcified intima, kPa
  double p95_max_noncalc = 0.0;
  double mean_behind = 0.0;  // outer intima rings inside the block arc, residual, kPa
  double mean_intima_max = 0.0;
};

struct MorphologyStudy {
  std::vector<ScenarioResult> scenarios;  // homogeneous, asymmetric, opposing, circumferential, calc, lipid
  bool ordering = false;                  // circumferential > asymmetric > homogeneous
  bool shielding = false;                 // behind-block mean below homogeneous
  bool stiffness = false;                 // homogeneous calcification > homogeneous lipid
  const ScenarioResult& get(const std::string& name) const {
    for (const auto& s : scenarios)
      if (s.name == name) return s;
    throw Error(ErrorCode::PreconditionViolation, "no scenario " + name);
  }
};

inline MorphologyStudy morphology_study(const RunConfig& cfg, int threads) {
  const auto& mc = cfg.morphology;
  SynthGeometry geo;
  geo.lumen_radius = mc.lumen_radius;
  geo.t_media = cfg.mesh.t_media;
  geo.t_adv = cfg.mesh.t_adv;
  geo.n_sectors = cfg.mesh.n_sectors;
  geo.rings = cfg.mesh.rings;
  const ThicknessProfile thickness{mc.intima_thickness, 0.0, 0.0};

  AsymmetricBlock block;
  block.arc_deg = mc.block_arc;
  std::vector<std::pair<std::string, MorphologyPattern>> patterns = {
      {"homogeneous_fibrotic", {Homogeneous{PlaqueComponent::Fibrotic}, thickness}},
      {"asymmetric_block", {block, thickness}},
      {"opposing_blocks", {OpposingBlocks{mc.opposing_arc, 0.0}, thickness}},
      {"circumferential", {CircumferentialCalc{mc.circumferential_arc, 0.0}, thickness}},
      {"homogeneous_calcification", {Homogeneous{PlaqueComponent::Calcification}, thickness}},
      {"homogeneous_lipid_rich", {Homogeneous{PlaqueComponent::LipidRich}, thickness}},
  };

  // Behind-block region: intima elements outside the calcified rings of the
  // block, inside its arc. Same element set for every scenario.
  const int first_behind = static_cast<int>(std::ceil(block.calcified_fraction * geo.rings.intima - 1e-9));
  auto behind = [&](const CrossSectionMesh& m, std::size_t e) {
    return m.element_layer[e] == Layer::Intima && m.element_ring(e) >= first_behind &&
           detail::in_arc(sector_center_deg(m, m.element_sector(e)), block.center_deg, block.arc_deg);
  };

  MorphologyStudy study;
  study.scenarios.resize(patterns.size());
  std::vector<std::optional<std::string>> errors(patterns.size());
  parallel_for(patterns.size(), threads, [&](std::size_t k) {
    try {
      auto& s = study.scenarios[k];
      s.name = patterns[k].first;
      s.sim = simulate_mesh(synth_slice(patterns[k].second, geo), cfg);
      const auto& m = s.sim.mesh;
      auto noncalc = [&](std::size_t e) {
        return m.element_layer[e] == Layer::Intima && m.element_material[e] != Tissue::Calcification;
      };
      const auto& res = s.sim.result;
      const auto nc_res = stress_samples(m, res.state_residual, noncalc);
      const auto nc_max = stress_samples(m, res.state_max, noncalc);
      if (!nc_res.empty()) s.p95_residual_noncalc = weighted_quantile(nc_res, 0.95);
      if (!nc_max.empty()) s.p95_max_noncalc = weighted_quantile(nc_max, 0.95);
      s.mean_behind =
          summarize(stress_samples(m, res.state_residual, [&](std::size_t e) { return behind(m, e); }), {}).mean_p1;
      s.mean_intima_max = summarize(stress_samples(m, res.state_max, LayerFilter::Intima), {}).mean_p1;
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });
  for (std::size_t k = 0; k < errors.size(); ++k)
    if (errors[k]) throw Error(ErrorCode::AbortedStep, patterns[k].first + ": " + *errors[k]);

  const auto& homog = study.get("homogeneous_fibrotic");
  const auto& asym = study.get("asymmetric_block");
  const auto& circ = study.get("circumferential");
  study.ordering = circ.p95_residual_noncalc > asym.p95_residual_noncalc &&
                   asym.p95_residual_noncalc > homog.p95_residual_noncalc;
  study.shielding = asym.mean_behind < homog.mean_behind;
  study.stiffness =
      study.get("homogeneous_calcification").mean_intima_max > study.get("homogeneous_lipid_rich").mean_intima_max;
  return study;
}

inline void write_morphology(const fs::path& out, const MorphologyStudy& st) {
  std::string t = "scenario,p95_residual_noncalc_intima_kpa,p95_max_noncalc_intima_kpa,mean_behind_block_kpa,"
                  "mean_intima_max_kpa,max_penetration_mm\n";
  for (const auto& s : st.scenarios)
    t += s.name + "," + text::format_double(s.p95_residual_noncalc) + "," + text::format_double(s.p95_max_noncalc) +
         "," + text::format_double(s.mean_behind) + "," + text::format_double(s.mean_intima_max) + "," +
         text::format_double(s.sim.max_penetration) + "\n";
  text::write_file(out / "scenarios.csv", t);
  json j;
  j["circumferential_gt_asymmetric_gt_homogeneous"] = st.ordering;
  j["behind_block_below_homogeneous"] = st.shielding;
  j["calcification_gt_lipid_rich"] = st.stiffness;
  text::write_file(out / "orderings.json", j.dump(2) + "\n");
  for (const auto& s : st.scenarios) {
    const fs::path dir = out / s.name;
    prepare_dir(dir);
    text::write_file(dir / "elements.csv", io::elements_csv(s.sim.mesh));
    text::write_file(dir / "residual.vtk", io::vtk(s.sim.mesh, &s.sim.result.state_residual));
  }
}

inline int cmd_morphology_study(const fs::path& out, const Options& opt) {
  Stopwatch total;
  const int threads = resolve_threads(opt.threads);
  Manifest man("morphology-study", threads);
  RunConfig cfg;
  opt.overrides.apply(cfg);
  prepare_dir(out);
  const auto st = morphology_study(cfg, threads);
  write_morphology(out, st);
  man.data["status"] = "ok";
  man.time("total", total.seconds());
  finish(out, cfg, man);
  return kOk;
}

// ---------------------------------------------------------------------------
// end-to-end

/// segment -> simulate -> analyze -> correlate on one case, each stage in its
/// own subdirectory of `out`.
inline int cmd_pipeline(const fs::path& case_dir, const fs::path& out, const Options& opt) {
  Stopwatch total;
  const int threads = resolve_threads(opt.threads);
  Manifest man("pipeline", threads);
  const CaseBundle b = load_case(case_dir);
  const RunConfig cfg = case_config(b, opt.overrides);
  prepare_dir(out);
  int code = kOk;

  Stopwatch t_seg;
  const fs::path seg_dir = out / "segment";
  prepare_dir(seg_dir);
  const auto seg = segment(b, cfg);
  write_segment(seg_dir, b, cfg, seg);
  man.time("segment", t_seg.seconds());

  Stopwatch t_sim;
  const fs::path sim_dir = out / "simulate";
  prepare_dir(sim_dir);
  const LameCheck lame = lame_self_test();
  text::write_file(sim_dir / "self_test.json", lame_json(lame).dump(2) + "\n");
  const auto sim = simulate(b, cfg, seg.model, threads, sim_dir);
  write_simulate(sim_dir, cfg, sim);
  man.time("simulate", t_sim.seconds());
  man.data["failed_slices"] = sim.failed();
  if (sim.failed() || !lame.pass) code = kPartial;

  const auto summaries = sim.residual_summaries();
  if (summaries.empty()) {
    man.data["status"] = "partial";
    man.data["note"] = "no converged slices; analyze and correlate skipped";
    man.time("total", total.seconds());
    finish(out, cfg, man);
    return kPartial;
  }

  Stopwatch t_an;
  const fs::path an_dir = out / "analyze";
  prepare_dir(an_dir);
  std::vector<std::vector<io::GaussStressRow>> fields;
  std::vector<int> index;
  for (std::size_t i = 0; i < sim.slices.size(); ++i) {
    const auto& s = sim.slices[i];
    if (!s.sim) continue;
    fields.push_back(io::parse_gauss_stress_csv(io::gauss_stress_csv(s.sim->mesh, s.sim->result.state_residual),
                                                slice_name(i)));
    index.push_back(static_cast<int>(i));
  }
  write_analyze(an_dir, cfg, analyze_fields(std::move(fields), std::move(index), cfg), b.num_slices());
  man.time("analyze", t_an.seconds());

  Stopwatch t_cor;
  const fs::path cor_dir = out / "correlate";
  prepare_dir(cor_dir);
  try {
    fs::path norm = fs::absolute(case_dir).lexically_normal();
    if (norm.filename().empty()) norm = norm.parent_path();
    const std::string id = norm.filename().string();
    const auto rep = correlate({{id.empty() ? "case" : id, summaries, b.profiles}}, cfg);
    write_correlate(cor_dir, cfg, rep);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::PreconditionViolation) throw;
    text::write_file(cor_dir / "skipped.txt", std::string(e.what()) + "\n");
    code = kPartial;
  }
  man.time("correlate", t_cor.seconds());

  man.data["status"] = code == kOk ? "ok" : "partial";
  man.time("total", total.seconds());
  finish(out, cfg, man);
  return code;
}

}  // namespace plaquemech::pipeline
