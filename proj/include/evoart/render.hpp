#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "evoart/genome.hpp"
#include "evoart/rng.hpp"
#include "evoart/vec3.hpp"

namespace evoart {

// Index of refraction of BK7 glass (d-line, no dispersion).
inline constexpr double kBk7Ior = 1.5046;

// Minimum hit distance, in cube units, to avoid self-intersection.
inline constexpr double kRayEpsilon = 1e-4;

struct Camera {
  Vec3 position{0.5, 0.5, 2.7};
  Vec3 look_at{0.5, 0.5, 0.5};
  Vec3 up{0.0, 1.0, 0.0};
  double vertical_fov = 45.0;  // degrees
  int width = 224;
  int height = 224;

  // Throws std::invalid_argument when the camera cannot form a basis.
  void validate() const;
};

struct RenderSettings {
  int samples_per_pixel = 16;
  int max_depth = 8;  // scattering events; the next would return black
  Rgb environment_radiance{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;

  void validate() const;
};

struct Film {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;  // row-major, linear radiance

  Film() = default;
  Film(int w, int h, Rgb fill = {}) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const Film&) const = default;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;
};

struct Hit {
  double t = 0.0;
  std::size_t triangle_index = 0;
  double u = 0.0;  // weight of v2
  double v = 0.0;  // weight of v3
  bool front_facing = true;
};

// Moller-Trumbore. Returns the hit with kRayEpsilon < t < t_max, if any.
// Zero-area triangles never hit.
std::optional<Hit> intersect_triangle(const Ray& ray, const Triangle& tri, double t_max);

struct Aabb {
  Vec3 lo{1e300, 1e300, 1e300};
  Vec3 hi{-1e300, -1e300, -1e300};

  void expand(const Vec3& p) {
    lo = min(lo, p);
    hi = max(hi, p);
  }
  void expand(const Aabb& b) {
    lo = min(lo, b.lo);
    hi = max(hi, b.hi);
  }
  bool contains(const Aabb& b) const {
    return lo.x <= b.lo.x && lo.y <= b.lo.y && lo.z <= b.lo.z && hi.x >= b.hi.x && hi.y >= b.hi.y &&
           hi.z >= b.hi.z;
  }
};

class Bvh {
 public:
  struct Node {
    Aabb bounds;
    std::uint32_t first = 0;  // leaf: offset into order(); inner: right child index
    std::uint32_t count = 0;  // 0 for inner nodes; left child is this index + 1
  };

  Bvh() = default;
  explicit Bvh(std::span<const Triangle> triangles);

  // Nearest hit; ties in t resolve to the lower triangle index.
  std::optional<Hit> intersect(const Ray& ray, std::span<const Triangle> triangles,
                               double t_max = 1e300) const;

  std::span<const Node> nodes() const { return nodes_; }
  std::span<const std::uint32_t> order() const { return order_; }

 private:
  std::uint32_t build(std::vector<Aabb>& boxes, std::vector<Vec3>& centroids, std::uint32_t begin,
                      std::uint32_t end);

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> order_;
};

Bvh build_bvh(const Scene& scene);

// Reference nearest-hit search over all triangles, same tie rule as Bvh.
std::optional<Hit> intersect_brute_force(const Ray& ray, std::span<const Triangle> triangles,
                                         double t_max = 1e300);

// Unpolarized Fresnel reflectance entering a dielectric of index `ior` from air.
double fresnel_dielectric(double cos_incident, double ior);

// Reflectance of a thin sheet including inter-reflections: 2r / (1 + r).
double thin_sheet_reflectance(double cos_incident, double ior);

// One-sample radiance estimate along `ray`.
Rgb trace(const Ray& ray, const Scene& scene, const Bvh& bvh, const RenderSettings& settings, Pcg32& rng);

Ray camera_ray(const Camera& camera, double px, double py);

inline constexpr int kTileSize = 16;

// `workers` = 0 uses hardware concurrency. Output is independent of `workers`.
Film render(const Scene& scene, const Camera& camera, const RenderSettings& settings, unsigned workers = 1);

}  // namespace evoart
