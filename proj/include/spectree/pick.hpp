#ifndef SPECTREE_PICK_HPP
#define SPECTREE_PICK_HPP

#include <limits>
#include <optional>

#include "common.hpp"
#include "mesh.hpp"
#include "voxel.hpp"

namespace spectree {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};

struct PickHit {
  std::uint32_t voxel = 0;
  std::uint32_t vertex = 0;
  std::uint32_t face = 0;
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
};

/// Moller-Trumbore; returns the ray parameter of a front or back hit.
inline std::optional<double> intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c) {
  constexpr double eps = 1e-12;
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = ray.direction.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < eps) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = ray.origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = ray.direction.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t < 0.0) return std::nullopt;
  return t;
}

/// Nearest ray-mesh hit, mapped to the voxel of the hit face's vertex closest
/// to the hit point. Empty on a miss.
inline std::optional<PickHit> resolve_pick(const Ray& ray, const TriMesh& mesh, const SparseVoxelGrid& grid) {
  if (grid.vertex_to_voxel.size() != mesh.vertex_count()) fail_data("pick grid does not match the mesh");
  if (!ray.origin.allFinite() || !ray.direction.allFinite()) fail_usage("pick ray must be finite");
  const double len = ray.direction.norm();
  if (!(len > 0.0)) fail_usage("pick ray direction must be non-zero");
  const Ray unit{ray.origin, ray.direction / len};
  std::optional<PickHit> best;
  double best_t = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    auto t = intersect_triangle(unit, mesh.corner(f, 0), mesh.corner(f, 1), mesh.corner(f, 2));
    if (!t || *t >= best_t) continue;
    best_t = *t;
    PickHit hit;
    hit.face = static_cast<std::uint32_t>(f);
    hit.distance = *t;
    hit.point = unit.origin + *t * unit.direction;
    best = hit;
  }
  if (!best) return std::nullopt;
  double nearest = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    const auto idx = mesh.faces[best->face][k];
    const double d = (mesh.vertices[idx] - best->point).squaredNorm();
    if (d < nearest) {
      nearest = d;
      best->vertex = idx;
    }
  }
  best->voxel = grid.vertex_to_voxel[best->vertex];
  return best;
}

}  // namespace spectree

#endif  // SPECTREE_PICK_HPP
