#include <algorithm>
#include <cmath>
#include <numeric>

#include "evoart/render.hpp"

namespace evoart {

namespace {

constexpr std::uint32_t kLeafSize = 2;
constexpr int kMaxStack = 64;

Aabb triangle_bounds(const Triangle& t) {
  Aabb b;
  b.expand(t.v1);
  b.expand(t.v2);
  b.expand(t.v3);
  return b;
}

// Slab test; returns the entry distance or +inf on a miss.
double slab_entry(const Aabb& box, const Vec3& origin, const Vec3& inv_dir, double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int axis = 0; axis < 3; ++axis) {
    double near = (box.lo[axis] - origin[axis]) * inv_dir[axis];
    double far = (box.hi[axis] - origin[axis]) * inv_dir[axis];
    if (near > far) std::swap(near, far);
    // NaN (0 * inf) keeps the previous bound through the comparisons below.
    t0 = near > t0 ? near : t0;
    t1 = far < t1 ? far : t1;
  }
  // Slack keeps rays that graze a flat box (zero thickness) from being culled.
  return t0 <= t1 * (1.0 + 1e-12) + 1e-12 ? t0 : INFINITY;
}

}  // namespace

Bvh::Bvh(std::span<const Triangle> triangles) {
  if (triangles.empty()) return;
  const auto n = static_cast<std::uint32_t>(triangles.size());
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0u);
  std::vector<Aabb> boxes(n);
  std::vector<Vec3> centroids(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    boxes[i] = triangle_bounds(triangles[i]);
    centroids[i] = (triangles[i].v1 + triangles[i].v2 + triangles[i].v3) / 3.0;
  }
  nodes_.reserve(2 * n);
  build(boxes, centroids, 0, n);
}

std::uint32_t Bvh::build(std::vector<Aabb>& boxes, std::vector<Vec3>& centroids, std::uint32_t begin,
                         std::uint32_t end) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();

  Aabb bounds, centroid_bounds;
  for (std::uint32_t i = begin; i < end; ++i) {
    bounds.expand(boxes[order_[i]]);
    centroid_bounds.expand(centroids[order_[i]]);
  }
  nodes_[index].bounds = bounds;

  if (end - begin <= kLeafSize) {
    nodes_[index].first = begin;
    nodes_[index].count = end - begin;
    return index;
  }

  const Vec3 extent = centroid_bounds.hi - centroid_bounds.lo;
  const int axis = extent.x >= extent.y && extent.x >= extent.z ? 0 : (extent.y >= extent.z ? 1 : 2);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = centroids[a][axis], cb = centroids[b][axis];
                     return ca < cb || (ca == cb && a < b);
                   });

  build(boxes, centroids, begin, mid);
  const std::uint32_t right = build(boxes, centroids, mid, end);
  nodes_[index].first = right;
  nodes_[index].count = 0;
  return index;
}

std::optional<Hit> Bvh::intersect(const Ray& ray, std::span<const Triangle> triangles, double t_max) const {
  std::optional<Hit> best;
  if (nodes_.empty()) return best;

  const Vec3 inv_dir{1.0 / ray.direction.x, 1.0 / ray.direction.y, 1.0 / ray.direction.z};
  double limit = t_max;

  std::uint32_t stack[kMaxStack];
  int top = 0;
  if (slab_entry(nodes_[0].bounds, ray.origin, inv_dir, limit) == INFINITY) return best;
  stack[top++] = 0;

  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (node.count > 0) {
      for (std::uint32_t k = node.first; k < node.first + node.count; ++k) {
        const std::uint32_t tri = order_[k];
        // Accept t == limit so that equal-distance ties can resolve by index.
        auto h = intersect_triangle(ray, triangles[tri], best ? std::nextafter(limit, INFINITY) : limit);
        if (!h) continue;
        if (!best || h->t < best->t || (h->t == best->t && tri < best->triangle_index)) {
          h->triangle_index = tri;
          best = h;
          limit = h->t;
        }
      }
      continue;
    }

    const std::uint32_t left = static_cast<std::uint32_t>(&node - nodes_.data()) + 1;
    const std::uint32_t right = node.first;
    const double t_left = slab_entry(nodes_[left].bounds, ray.origin, inv_dir, limit);
    const double t_right = slab_entry(nodes_[right].bounds, ray.origin, inv_dir, limit);
    // Push the farther child first so the nearer one is visited next.
    if (t_left <= t_right) {
      if (t_right != INFINITY) stack[top++] = right;
      if (t_left != INFINITY) stack[top++] = left;
    } else {
      if (t_left != INFINITY) stack[top++] = left;
      if (t_right != INFINITY) stack[top++] = right;
    }
  }
  return best;
}

Bvh build_bvh(const Scene& scene) { return Bvh(scene.triangles); }

}  // namespace evoart
