#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "evoart/image.hpp"
#include "evoart/run.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitScorer = 3;
constexpr int kExitIo = 4;

namespace fs = std::filesystem;

int rerender_command(const fs::path& scene_path, const fs::path& config_path, const std::optional<fs::path>& out_dir,
                     std::optional<int> spp, std::optional<int> width, std::optional<int> height,
                     std::optional<std::uint64_t> seed) {
  evoart::RunConfig config = evoart::load_run_config(config_path);
  if (spp) config.render.samples_per_pixel = *spp;
  if (seed) config.render.seed = *seed;
  for (auto& view : config.views) {
    if (width) view.camera.width = *width;
    if (height) view.camera.height = *height;
  }
  const evoart::Scene scene = evoart::load_scene(scene_path.string());
  const fs::path dir = out_dir.value_or(config.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw evoart::IoError("cannot create " + dir.string() + ": " + ec.message());

  const auto films = evoart::rerender(scene, config.views, config.render);
  for (std::size_t i = 0; i < films.size(); ++i) {
    const fs::path file = dir / ("view" + std::to_string(i) + ".png");
    try {
      evoart::write_png(evoart::tonemap(films[i]), file.string());
    } catch (const evoart::ImageError& e) {
      throw evoart::IoError(e.what());
    }
    std::cout << file.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolve scenes of semi-transparent triangles with CMA-ES against per-camera targets"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run (or resume) an evolution described by a config file");
  fs::path config_path;
  std::optional<fs::path> resume, output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> stop_after;
  bool verbose = false;
  run_cmd->add_option("config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--resume", resume, "Resume from a checkpoint_<g>.json file")->check(CLI::ExistingFile);
  run_cmd->add_option("--output-dir", output_dir, "Override output_dir from the config");
  run_cmd->add_option("--seed", seed, "Override cma.seed from the config");
  run_cmd->add_option("--stop-after", stop_after, "Stop after this generation, leaving a resumable state");
  run_cmd->add_flag("-v,--verbose", verbose, "Print progress per generation");

  auto* rerender_cmd = app.add_subcommand("rerender", "Render a saved scene file for every configured view");
  fs::path scene_path, rerender_config;
  std::optional<fs::path> rerender_out;
  std::optional<int> spp, width, height;
  std::optional<std::uint64_t> render_seed;
  rerender_cmd->add_option("scene", scene_path, "Scene file (JSON)")->required()->check(CLI::ExistingFile);
  rerender_cmd->add_option("--config", rerender_config, "Run configuration providing views and render settings")
      ->required()
      ->check(CLI::ExistingFile);
  rerender_cmd->add_option("--output-dir", rerender_out, "Directory for view<i>.png (default: config output_dir)");
  rerender_cmd->add_option("--spp", spp, "Samples per pixel")->check(CLI::PositiveNumber);
  rerender_cmd->add_option("--width", width, "Film width")->check(CLI::PositiveNumber);
  rerender_cmd->add_option("--height", height, "Film height")->check(CLI::PositiveNumber);
  rerender_cmd->add_option("--seed", render_seed, "Render seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd) {
      evoart::RunConfig config = evoart::load_run_config(config_path);
      if (output_dir) config.output_dir = *output_dir;
      if (seed) config.cma.seed = *seed;
      evoart::RunOptions options;
      options.resume = resume;
      options.stop_after = stop_after;
      options.verbose = verbose;
      const auto summary = evoart::run(config, options);
      std::printf("best_fitness %.17g\ngenerations %zu\nwall_seconds %.3f\n%s\n", summary.best_fitness,
                  summary.generations, summary.wall_seconds, summary.completed ? "completed" : "stopped");
      return 0;
    }
    return rerender_command(scene_path, rerender_config, rerender_out, spp, width, height, render_seed);
  } catch (const evoart::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const evoart::SceneParseError& e) {
    std::cerr << "scene error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const evoart::ScorerFailure& e) {
    std::cerr << "scorer failure: " << e.what() << '\n';
    return kExitScorer;
  } catch (const evoart::EvaluationError& e) {
    std::cerr << "scorer failure: " << e.what() << '\n';
    return kExitScorer;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "I/O failure: " << e.what() << '\n';
    return kExitIo;
  }
}
