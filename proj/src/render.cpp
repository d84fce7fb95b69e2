#include "evoart/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "evoart/parallel.hpp"

namespace evoart {

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera resolution must be positive");
  if (!(vertical_fov > 0.0 && vertical_fov < 180.0)) throw std::invalid_argument("vertical_fov must be in (0,180)");
  const Vec3 forward = look_at - position;
  if (length(forward) <= 0.0) throw std::invalid_argument("camera position equals look_at");
  if (length(cross(forward, up)) <= 1e-12 * length(forward) * length(up))
    throw std::invalid_argument("camera up vector is parallel to the view direction");
}

void RenderSettings::validate() const {
  if (samples_per_pixel < 1) throw std::invalid_argument("samples_per_pixel must be at least 1");
  if (max_depth < 1) throw std::invalid_argument("max_depth must be at least 1");
  const Rgb& e = environment_radiance;
  if (!(e.x >= 0.0 && e.y >= 0.0 && e.z >= 0.0) || !std::isfinite(e.x + e.y + e.z))
    throw std::invalid_argument("environment_radiance must be finite and non-negative");
}

std::optional<Hit> intersect_triangle(const Ray& ray, const Triangle& tri, double t_max) {
  const Vec3 e1 = tri.v2 - tri.v1;
  const Vec3 e2 = tri.v3 - tri.v1;
  const Vec3 p = cross(ray.direction, e2);
  const double det = dot(e1, p);
  // det = -dot(d, e1 x e2): zero for zero-area triangles and grazing rays.
  if (det == 0.0 || !std::isfinite(det)) return std::nullopt;
  const double inv_det = 1.0 / det;
  const Vec3 s = ray.origin - tri.v1;
  const double u = dot(s, p) * inv_det;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = cross(s, e1);
  const double v = dot(ray.direction, q) * inv_det;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = dot(e2, q) * inv_det;
  if (!(t > kRayEpsilon && t < t_max)) return std::nullopt;
  // Front face: the ray travels against the normal e1 x e2, i.e. det > 0.
  return Hit{t, 0, u, v, det > 0.0};
}

std::optional<Hit> intersect_brute_force(const Ray& ray, std::span<const Triangle> triangles, double t_max) {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < triangles.size(); ++i) {
    const double limit = best ? best->t : t_max;
    if (auto h = intersect_triangle(ray, triangles[i], limit)) {
      h->triangle_index = i;
      best = h;
    }
  }
  return best;
}

double fresnel_dielectric(double cos_incident, double ior) {
  const double cos_i = std::clamp(std::abs(cos_incident), 0.0, 1.0);
  const double sin_t2 = (1.0 - cos_i * cos_i) / (ior * ior);
  const double cos_t = std::sqrt(std::max(0.0, 1.0 - sin_t2));
  const double rs = (cos_i - ior * cos_t) / (cos_i + ior * cos_t);
  const double rp = (ior * cos_i - cos_t) / (ior * cos_i + cos_t);
  return 0.5 * (rs * rs + rp * rp);
}

double thin_sheet_reflectance(double cos_incident, double ior) {
  const double r = fresnel_dielectric(cos_incident, ior);
  return r < 1.0 ? 2.0 * r / (1.0 + r) : 1.0;
}

namespace {

void orthonormal_basis(const Vec3& n, Vec3& b1, Vec3& b2) {
  const double sign = std::copysign(1.0, n.z);
  const double a = -1.0 / (sign + n.z);
  const double b = n.x * n.y * a;
  b1 = {1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x};
  b2 = {b, sign + n.y * n.y * a, -n.y};
}

Vec3 sample_cosine_hemisphere(const Vec3& n, Pcg32& rng) {
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  const double r = std::sqrt(u1);
  const double phi = 2.0 * std::numbers::pi * u2;
  Vec3 b1, b2;
  orthonormal_basis(n, b1, b2);
  return normalize(b1 * (r * std::cos(phi)) + b2 * (r * std::sin(phi)) + n * std::sqrt(std::max(0.0, 1.0 - u1)));
}

}  // namespace

Rgb trace(const Ray& primary, const Scene& scene, const Bvh& bvh, const RenderSettings& settings, Pcg32& rng) {
  const std::span<const Triangle> tris = scene.triangles;
  Ray ray{primary.origin, normalize(primary.direction)};
  Rgb throughput{1.0, 1.0, 1.0};

  for (int bounce = 0;; ++bounce) {
    const auto hit = bvh.intersect(ray, tris);
    if (!hit) return throughput * settings.environment_radiance;
    if (bounce == settings.max_depth) return {};

    const Triangle& tri = tris[hit->triangle_index];
    const Vec3 point = ray.origin + ray.direction * hit->t;
    Vec3 normal = normalize(cross(tri.v2 - tri.v1, tri.v3 - tri.v1));
    if (dot(normal, ray.direction) > 0.0) normal = -normal;

    if (rng.uniform() < tri.alpha) {
      throughput *= tri.color;
      ray = {point, sample_cosine_hemisphere(normal, rng)};
    } else {
      const double cos_i = -dot(normal, ray.direction);
      if (rng.uniform() < thin_sheet_reflectance(cos_i, kBk7Ior)) {
        ray = {point, normalize(ray.direction + normal * (2.0 * cos_i))};
      } else {
        ray = {point, ray.direction};
      }
    }
  }
}

namespace {

struct CameraFrame {
  Vec3 origin, forward, right, up;
  double half_w, half_h, width, height;

  explicit CameraFrame(const Camera& camera)
      : origin(camera.position),
        forward(normalize(camera.look_at - camera.position)),
        right(normalize(cross(forward, camera.up))),
        up(cross(right, forward)),
        half_w(0.0),
        half_h(std::tan(camera.vertical_fov * std::numbers::pi / 360.0)),
        width(camera.width),
        height(camera.height) {
    half_w = half_h * width / height;
  }

  Ray ray(double px, double py) const {
    const double sx = (2.0 * px / width - 1.0) * half_w;
    const double sy = (1.0 - 2.0 * py / height) * half_h;
    return {origin, normalize(forward + right * sx + up * sy)};
  }
};

}  // namespace

Ray camera_ray(const Camera& camera, double px, double py) { return CameraFrame(camera).ray(px, py); }

Film render(const Scene& scene, const Camera& camera, const RenderSettings& settings, unsigned workers) {
  camera.validate();
  settings.validate();
  const Bvh bvh = build_bvh(scene);
  const CameraFrame frame(camera);
  Film film(camera.width, camera.height);

  const int tiles_x = (camera.width + kTileSize - 1) / kTileSize;
  const int tiles_y = (camera.height + kTileSize - 1) / kTileSize;

  parallel_for(static_cast<std::size_t>(tiles_x) * tiles_y, workers, [&](std::size_t tile) {
    Pcg32 rng(mix_seed(settings.seed, tile));
    const int x0 = static_cast<int>(tile % tiles_x) * kTileSize;
    const int y0 = static_cast<int>(tile / tiles_x) * kTileSize;
    const int x1 = std::min(x0 + kTileSize, camera.width);
    const int y1 = std::min(y0 + kTileSize, camera.height);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        // Running mean: stays exact when every sample is the same value.
        Rgb mean{};
        for (int s = 0; s < settings.samples_per_pixel; ++s) {
          const double jx = rng.uniform();
          const double jy = rng.uniform();
          const Rgb sample = trace(frame.ray(x + jx, y + jy), scene, bvh, settings, rng);
          mean += (sample - mean) / static_cast<double>(s + 1);
        }
        film.at(x, y) = mean;
      }
    }
  });
  return film;
}

}  // namespace evoart
