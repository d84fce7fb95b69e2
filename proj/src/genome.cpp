#include "evoart/genome.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace evoart {

namespace {

constexpr double kClampLow = 1e-9;
constexpr double kClampHigh = 1.0 - 1e-9;

double encode_component(double value, bool& clamped) {
  if (!(value > 0.0 && value < 1.0)) {
    clamped = true;
    value = std::clamp(value, kClampLow, kClampHigh);
  }
  return logit(value);
}

}  // namespace

void GenomeConfig::validate() const {
  if (triangle_count == 0) throw std::invalid_argument("triangle_count must be at least 1");
  if (const auto* fixed = std::get_if<FixedTransparency>(&transparency)) {
    if (!(fixed->alpha >= 0.0 && fixed->alpha <= 1.0))
      throw std::invalid_argument("fixed alpha must lie in [0,1]");
  }
}

std::size_t genome_dim(const GenomeConfig& config) {
  return config.triangle_count * config.genes_per_triangle();
}

double logistic(double gene) {
  // Split by sign so exp() never overflows.
  if (gene >= 0.0) return 1.0 / (1.0 + std::exp(-gene));
  const double e = std::exp(gene);
  return e / (1.0 + e);
}

double logit(double value) { return std::log(value) - std::log1p(-value); }

Scene decode(std::span<const double> genes, const GenomeConfig& config) {
  const std::size_t expected = genome_dim(config);
  if (genes.size() != expected) {
    throw EncodingError("genome has " + std::to_string(genes.size()) + " genes, expected " +
                        std::to_string(expected));
  }
  for (std::size_t i = 0; i < genes.size(); ++i) {
    if (!std::isfinite(genes[i])) throw EncodingError("gene " + std::to_string(i) + " is not finite");
  }

  const std::size_t stride = config.genes_per_triangle();
  const auto* fixed = std::get_if<FixedTransparency>(&config.transparency);

  Scene scene;
  scene.triangles.reserve(config.triangle_count);
  for (std::size_t t = 0; t < config.triangle_count; ++t) {
    const double* g = genes.data() + t * stride;
    auto s = [g](std::size_t k) { return logistic(g[k]); };
    Triangle tri;
    tri.v1 = {s(0), s(1), s(2)};
    tri.v2 = {s(3), s(4), s(5)};
    tri.v3 = {s(6), s(7), s(8)};
    tri.color = {s(9), s(10), s(11)};
    tri.alpha = fixed ? fixed->alpha : s(12);
    scene.triangles.push_back(tri);
  }
  return scene;
}

EncodeResult encode(const Scene& scene, const GenomeConfig& config) {
  if (scene.triangles.size() != config.triangle_count) {
    throw EncodingError("scene has " + std::to_string(scene.triangles.size()) + " triangles, expected " +
                        std::to_string(config.triangle_count));
  }
  EncodeResult result;
  auto& out = result.genome.values;
  out.reserve(genome_dim(config));
  const bool with_alpha = config.learnable_alpha();
  for (const Triangle& tri : scene.triangles) {
    for (const Vec3& c : {tri.v1, tri.v2, tri.v3, tri.color}) {
      out.push_back(encode_component(c.x, result.clamped));
      out.push_back(encode_component(c.y, result.clamped));
      out.push_back(encode_component(c.z, result.clamped));
    }
    if (with_alpha) out.push_back(encode_component(tri.alpha, result.clamped));
  }
  return result;
}

}  // namespace evoart
