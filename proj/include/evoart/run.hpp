#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evoart/fitness.hpp"
#include "evoart/genome.hpp"
#include "evoart/render.hpp"

namespace evoart {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised after the run has checkpointed its last completed generation.
class ScorerFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScorerKind { Embedding, TargetImage };

struct ScorerConfig {
  ScorerKind kind = ScorerKind::Embedding;
  std::string service_url = "http://127.0.0.1:8000";
};

struct CmaRunConfig {
  std::size_t population_size = 128;
  std::size_t generations = 1200;
  double sigma0 = 1.0;
  std::uint64_t seed = 1;
};

struct ExportConfig {
  bool film_pngs = true;
  bool scene_json = true;
  int turntable_frames = 0;
  double turntable_elevation_deg = 20.0;
};

struct RunConfig {
  GenomeConfig genome;
  std::vector<ViewSpec> views;
  ScorerConfig scorer;
  CmaRunConfig cma;
  RenderSettings render;
  std::filesystem::path output_dir = "out";
  std::size_t checkpoint_every = 50;
  unsigned workers = 0;  // 0 = hardware concurrency
  ExportConfig exports;

  // Throws ConfigError.
  void validate() const;
};

inline constexpr double kCameraDistance = 2.2;
inline constexpr double kCameraFov = 45.0;

// Camera on a circle around the cube centre; azimuth 0 looks from +z,
// 90 from +x.
Camera orbit_camera(double azimuth_deg, double elevation_deg, int width, int height,
                    double distance = kCameraDistance);

// The four side views (+z, +x, -z, -x), in that order.
std::vector<Camera> side_cameras(int width, int height);

// 50 learnable triangles, four side cameras sharing one prompt, lambda 128,
// 1200 generations, embedding scorer.
RunConfig default_run_config(const std::string& prompt);

// Relative paths in the document (reference images and scenes) resolve
// against `base_dir`. Throws ConfigError naming the offending field.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

std::unique_ptr<Scorer> make_scorer(const ScorerConfig& config);

struct RunOptions {
  std::optional<std::filesystem::path> resume;
  // Stop after this generation as if interrupted (last checkpoint stays valid).
  std::optional<std::size_t> stop_after;
  // Replaces the scorer built from the config.
  std::shared_ptr<const Scorer> scorer;
  bool verbose = false;
};

struct RunSummary {
  double best_fitness = 0.0;
  std::size_t generations = 0;  // last completed generation
  double wall_seconds = 0.0;
  bool completed = false;
  Scene best_scene;
};

// File layout under output_dir:
//   trajectory.log                 generation, best, median, sigma, min_eig, max_eig
//   checkpoint_<g>.json            optimizer state + RNG, resumable; also written
//                                  when stop_after ends the run early
//   scene_<g>.json, view<i>_<g>.png  best genome so far
//   turntable_<k>.png              after the final generation
RunSummary run(const RunConfig& config, const RunOptions& options = {});

std::vector<Film> rerender(const Scene& scene, std::span<const ViewSpec> views, const RenderSettings& settings);

std::string trajectory_line(std::size_t generation, double best, double median, double sigma, double min_eig,
                            double max_eig);

}  // namespace evoart
