#pragma once

// Test-only helpers: independent reference computations and run harnesses.

#include <cmath>
#include <optional>
#include <random>

#include "evoart/cmaes.hpp"
#include "evoart/render.hpp"

namespace oracle {

using evoart::Ray;
using evoart::Triangle;
using evoart::Vec3;

struct PlaneHit {
  double t;
  double u;  // weight of v2
  double v;  // weight of v3
};

// Two-step intersection: hit the supporting plane, then test barycentric
// coordinates of the hit point (Gram-matrix solve).
inline std::optional<PlaneHit> plane_then_barycentric(const Ray& ray, const Triangle& tri, double t_min,
                                                      double t_max) {
  const Vec3 e1 = tri.v2 - tri.v1;
  const Vec3 e2 = tri.v3 - tri.v1;
  const Vec3 n = evoart::cross(e1, e2);
  if (evoart::dot(n, n) == 0.0) return std::nullopt;
  const double denom = evoart::dot(n, ray.direction);
  if (denom == 0.0) return std::nullopt;
  const double t = evoart::dot(n, tri.v1 - ray.origin) / denom;
  if (!(t > t_min && t < t_max)) return std::nullopt;
  const Vec3 p = ray.origin + ray.direction * t;
  const Vec3 w = p - tri.v1;
  const double d00 = evoart::dot(e1, e1), d01 = evoart::dot(e1, e2), d11 = evoart::dot(e2, e2);
  const double d20 = evoart::dot(w, e1), d21 = evoart::dot(w, e2);
  const double g = d00 * d11 - d01 * d01;
  const double u = (d11 * d20 - d01 * d21) / g;
  const double v = (d00 * d21 - d01 * d20) / g;
  if (u < 0.0 || v < 0.0 || u + v > 1.0) return std::nullopt;
  return PlaneHit{t, u, v};
}

inline Vec3 random_point(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return {d(rng), d(rng), d(rng)};
}

inline Triangle random_triangle(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return {random_point(rng, 0.0, 1.0), random_point(rng, 0.0, 1.0), random_point(rng, 0.0, 1.0),
          {unit(rng), unit(rng), unit(rng)}, unit(rng)};
}

// Ray from outside the cube aimed near the cube so roughly half the rays hit.
inline Ray random_ray(std::mt19937_64& rng) {
  const Vec3 origin = random_point(rng, -1.0, 2.0);
  const Vec3 target = random_point(rng, -0.2, 1.2);
  return {origin, evoart::normalize(target - origin)};
}

// Ray aimed at a point with barycentric weights drawn from [-0.3, 1.3], so
// hits and near misses around the edges are both common.
inline Ray ray_toward(std::mt19937_64& rng, const Triangle& tri) {
  std::uniform_real_distribution<double> w(-0.3, 1.3);
  const double u = w(rng), v = w(rng);
  const Vec3 target = tri.v1 + (tri.v2 - tri.v1) * u + (tri.v3 - tri.v1) * v;
  const Vec3 origin = random_point(rng, -1.0, 2.0);
  return {origin, evoart::normalize(target - origin)};
}

template <class V>
inline double sphere(const V& x) { return x.squaredNorm(); }

inline double rosenbrock(const Eigen::VectorXd& x) {
  double f = 0.0;
  for (Eigen::Index i = 0; i + 1 < x.size(); ++i) {
    const double a = x[i + 1] - x[i] * x[i];
    const double b = 1.0 - x[i];
    f += 100.0 * a * a + b * b;
  }
  return f;
}

struct ConvergenceResult {
  double best = INFINITY;
  std::size_t evaluations = 0;
};

// Runs until `target` is reached or the budget is spent.
template <class F>
ConvergenceResult minimize(F&& f, const Eigen::VectorXd& mean0, double sigma0, std::size_t lambda,
                           std::size_t budget, double target, std::uint64_t seed) {
  evoart::CmaEs es(evoart::CmaConfig::standard(mean0.size(), lambda, sigma0), mean0);
  std::mt19937_64 rng(seed);
  ConvergenceResult r;
  while (r.evaluations + lambda <= budget && r.best >= target) {
    const auto xs = es.ask(rng);
    std::vector<double> fs;
    for (const auto& x : xs) fs.push_back(f(x));
    es.tell(xs, fs);
    r.evaluations += lambda;
    r.best = es.best()->fitness;
  }
  return r;
}

}  // namespace oracle
