// plaquemech command-line front end.
//
// Exit codes: 0 success, 1 partial slice failures, 2 input errors,
// 3 internal errors.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "plaquemech.hpp"

namespace fs = std::filesystem;
using namespace plaquemech;

namespace {

struct Common {
  std::vector<std::string> config_files;
  std::vector<std::string> sets;
  int threads = 0;
  std::uint64_t seed = 1;
};

pipeline::Options options(const Common& c) {
  pipeline::Options o;
  o.threads = c.threads;
  for (const auto& f : c.config_files) o.overrides.texts.emplace_back(text::read_file(f), f);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigParse, "--set expects key=value, got '" + s + "'");
    o.overrides.sets.emplace_back(std::string(text::trim(s.substr(0, eq))), std::string(text::trim(s.substr(eq + 1))));
  }
  return o;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_files, "config file(s) applied over defaults and the case config")
      ->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "key=value override, applied last");
  app->add_option("--threads", c.threads, "worker threads for per-slice stages (0 = all cores)")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--seed", c.seed, "seed for synthetic data generation");
}

int run(int argc, char** argv) {
  CLI::App app{"Plaque segmentation, cross-section FE stenting simulation and stress/restenosis correlation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PLAQUEMECH_VERSION);
  Common common;
  std::string case_dir;
  std::string out_dir;
  std::string model_path;
  std::string sim_dir;

  auto* seg = app.add_subcommand("segment", "fit the HU mixture and label the intima voxels");
  auto* mesh = app.add_subcommand("mesh", "build labeled cross-section meshes for every slice");
  auto* sim = app.add_subcommand("simulate", "balloon/stent simulation of every slice");
  auto* pipe = app.add_subcommand("pipeline", "segment, simulate, analyze and correlate one case");
  for (auto* sc : {seg, mesh, sim, pipe}) {
    sc->add_option("--case", case_dir, "case bundle directory")->required();
    sc->add_option("--out", out_dir, "output directory")->required();
    add_common(sc, common);
  }
  for (auto* sc : {mesh, sim}) sc->add_option("--model", model_path, "model.csv from segment (refit if omitted)");

  auto* an = app.add_subcommand("analyze", "stress summaries and map thresholds from a simulate directory");
  an->add_option("--sim", sim_dir, "simulate output directory")->required();
  an->add_option("--out", out_dir, "output directory")->required();
  add_common(an, common);

  std::vector<std::string> summaries;
  std::vector<std::string> profiles;
  std::vector<std::string> ids;
  auto* cor = app.add_subcommand("correlate", "restenosis correlation and threshold sweep");
  cor->add_option("--summary", summaries, "summary.csv, one per case")->required();
  cor->add_option("--profiles", profiles, "profiles.csv, one per case, same order")->required();
  cor->add_option("--id", ids, "case ids, same order (default case0, case1, ...)");
  cor->add_option("--out", out_dir, "output directory")->required();
  add_common(cor, common);

  auto* morph = app.add_subcommand("morphology-study", "synthetic calcification scenarios under one load program");
  morph->add_option("--out", out_dir, "output directory")->required();
  add_common(morph, common);

  int n_slices = 20;
  auto* synth_cmd = app.add_subcommand("synth-case", "write a synthetic case bundle");
  synth_cmd->add_option("--out", out_dir, "case directory to create")->required();
  synth_cmd->add_option("--slices", n_slices, "number of slices")->check(CLI::PositiveNumber);
  add_common(synth_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pipeline::kInputError;
  }

  const auto opt = options(common);
  const std::optional<fs::path> model =
      model_path.empty() ? std::nullopt : std::optional<fs::path>(fs::path(model_path));
  if (*seg) return pipeline::cmd_segment(case_dir, out_dir, opt);
  if (*mesh) return pipeline::cmd_mesh(case_dir, out_dir, opt, model);
  if (*sim) return pipeline::cmd_simulate(case_dir, out_dir, opt, model);
  if (*an) return pipeline::cmd_analyze(sim_dir, out_dir, opt);
  if (*pipe) return pipeline::cmd_pipeline(case_dir, out_dir, opt);
  if (*morph) return pipeline::cmd_morphology_study(out_dir, opt);
  if (*cor) {
    if (summaries.size() != profiles.size() || (!ids.empty() && ids.size() != summaries.size()))
      throw Error(ErrorCode::LengthMismatch, "--summary, --profiles and --id must pair up");
    std::vector<pipeline::CorrelateSource> sources;
    for (std::size_t i = 0; i < summaries.size(); ++i)
      sources.push_back({ids.empty() ? "case" + std::to_string(i) : ids[i], summaries[i], profiles[i]});
    return pipeline::cmd_correlate(sources, out_dir, opt);
  }
  if (*synth_cmd) {
    synth::CaseSpec spec;
    spec.seed = common.seed;
    spec.n_slices = n_slices;
    spec.stent_begin = std::min(spec.stent_begin, n_slices - 1);
    spec.stent_end = std::min(spec.stent_end, n_slices - 1);
    save_case(synth::generate(spec).bundle, out_dir);
    return pipeline::kOk;
  }
  return pipeline::kInputError;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_input_error(e.code()) ? pipeline::kInputError : pipeline::kInternalError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return pipeline::kInternalError;
  }
}
