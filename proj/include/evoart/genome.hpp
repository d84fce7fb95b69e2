#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "evoart/vec3.hpp"

namespace evoart {

// Genome layout, one block per triangle:
//   x1 y1 z1  x2 y2 z2  x3 y3 z3  R G B  [A]
// Every gene is squashed through the logistic function, so any finite
// vector decodes to a valid scene. The alpha gene is dropped when the
// transparency is fixed.

class EncodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LearnableTransparency {
  bool operator==(const LearnableTransparency&) const = default;
};

struct FixedTransparency {
  double alpha = 0.5;
  bool operator==(const FixedTransparency&) const = default;
};

using TransparencyMode = std::variant<LearnableTransparency, FixedTransparency>;

struct GenomeConfig {
  std::size_t triangle_count = 1;
  TransparencyMode transparency = LearnableTransparency{};

  bool learnable_alpha() const { return std::holds_alternative<LearnableTransparency>(transparency); }
  std::size_t genes_per_triangle() const { return learnable_alpha() ? 13 : 12; }

  // Throws std::invalid_argument on zero triangles or a fixed alpha outside [0,1].
  void validate() const;
};

struct Genome {
  std::vector<double> values;
};

struct Triangle {
  Vec3 v1, v2, v3;
  Rgb color{0.5, 0.5, 0.5};
  double alpha = 0.5;

  bool operator==(const Triangle&) const = default;
};

struct Scene {
  std::vector<Triangle> triangles;
};

std::size_t genome_dim(const GenomeConfig& config);

double logistic(double gene);
double logit(double value);

Scene decode(std::span<const double> genes, const GenomeConfig& config);
inline Scene decode(const Genome& genome, const GenomeConfig& config) {
  return decode(genome.values, config);
}

struct EncodeResult {
  Genome genome;
  // Set when some component sat at 0 or 1 and had to be pulled inside
  // [1e-9, 1-1e-9] before taking the logit.
  bool clamped = false;
};

// Throws EncodingError if the scene size disagrees with the config.
EncodeResult encode(const Scene& scene, const GenomeConfig& config);

// Scene file (JSON):
//   {"triangles": [{"v1":[x,y,z], "v2":[...], "v3":[...], "color":[r,g,b], "alpha":a}, ...]}
class SceneParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

}  // namespace evoart
