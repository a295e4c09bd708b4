#ifndef SPECTREE_VOXEL_HPP
#define SPECTREE_VOXEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "common.hpp"
#include "mesh.hpp"

namespace spectree {

using VoxelCoord = std::array<std::uint16_t, 3>;

inline bool is_supported_resolution(std::uint32_t r) {
  return r >= 2 && r <= 512 && std::has_single_bit(r);
}

/// Partition of mesh vertices into occupied cubic voxels.
struct SparseVoxelGrid {
  std::uint32_t resolution = 128;
  Vec3 origin = Vec3::Zero();
  double voxel_size = 1.0;
  std::vector<VoxelCoord> occupied;
  std::vector<std::uint32_t> vertex_to_voxel;
  // CSR inverse map: members of voxel v are member_index[member_offset[v] .. member_offset[v+1]).
  std::vector<std::uint32_t> member_offset;
  std::vector<std::uint32_t> member_index;

  std::size_t voxel_count() const { return occupied.size(); }
  std::size_t vertex_count() const { return vertex_to_voxel.size(); }

  std::span<const std::uint32_t> members(std::size_t voxel) const {
    return {member_index.data() + member_offset[voxel], member_offset[voxel + 1] - member_offset[voxel]};
  }

  Vec3 voxel_center(std::size_t voxel) const {
    const auto& c = occupied[voxel];
    return origin + voxel_size * Vec3(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5);
  }

  std::vector<Vec3> voxel_centers() const {
    std::vector<Vec3> out(voxel_count());
    for (std::size_t v = 0; v < out.size(); ++v) out[v] = voxel_center(v);
    return out;
  }

  /// Rebuilds the inverse map from vertex_to_voxel.
  void rebuild_members() {
    const std::size_t n = occupied.size();
    member_offset.assign(n + 1, 0);
    for (auto v : vertex_to_voxel) {
      if (v >= n) fail_data("vertex maps to voxel " + std::to_string(v) + " but only " + std::to_string(n) + " are occupied");
      ++member_offset[v + 1];
    }
    for (std::size_t v = 0; v < n; ++v) {
      if (member_offset[v + 1] == 0) fail_data("occupied voxel " + std::to_string(v) + " owns no vertices");
      member_offset[v + 1] += member_offset[v];
    }
    member_index.resize(vertex_to_voxel.size());
    std::vector<std::uint32_t> cursor(member_offset.begin(), member_offset.end() - 1);
    for (std::size_t i = 0; i < vertex_to_voxel.size(); ++i)
      member_index[cursor[vertex_to_voxel[i]]++] = static_cast<std::uint32_t>(i);
  }

  bool same_partition(const SparseVoxelGrid& other) const {
    return resolution == other.resolution && occupied == other.occupied && vertex_to_voxel == other.vertex_to_voxel;
  }
};

/// Voxelizes mesh vertices on an R^3 grid of cubic cells. The grid spans the
/// vertex bounding box grown by half a voxel on every side; cells are ordered
/// by (x, y, z) coordinate.
inline SparseVoxelGrid build_grid(const TriMesh& mesh, std::uint32_t resolution = 128) {
  if (!is_supported_resolution(resolution))
    fail_usage("unsupported voxel resolution " + std::to_string(resolution) + " (power of two in [2, 512])");
  if (mesh.vertices.empty()) fail_data("cannot voxelize an empty mesh");

  SparseVoxelGrid grid;
  grid.resolution = resolution;
  const Aabb box = mesh.bounds();
  const double longest = box.extent().maxCoeff();
  // (longest + voxel_size) / R == voxel_size
  grid.voxel_size = longest > 0.0 ? longest / static_cast<double>(resolution - 1) : 1.0;
  grid.origin = box.min - Vec3::Constant(0.5 * grid.voxel_size);

  const auto r = static_cast<std::int64_t>(resolution);
  std::vector<std::uint64_t> keys(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    std::uint64_t key = 0;
    for (int a = 0; a < 3; ++a) {
      auto c = static_cast<std::int64_t>(std::floor((mesh.vertices[i][a] - grid.origin[a]) / grid.voxel_size));
      key = key * static_cast<std::uint64_t>(r) + static_cast<std::uint64_t>(std::clamp<std::int64_t>(c, 0, r - 1));
    }
    keys[i] = key;
  }
  std::vector<std::uint64_t> sorted = keys;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  grid.occupied.resize(sorted.size());
  for (std::size_t v = 0; v < sorted.size(); ++v) {
    std::uint64_t key = sorted[v];
    const auto ur = static_cast<std::uint64_t>(r);
    grid.occupied[v] = {static_cast<std::uint16_t>(key / (ur * ur)), static_cast<std::uint16_t>((key / ur) % ur),
                        static_cast<std::uint16_t>(key % ur)};
  }
  grid.vertex_to_voxel.resize(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i)
    grid.vertex_to_voxel[i] =
        static_cast<std::uint32_t>(std::lower_bound(sorted.begin(), sorted.end(), keys[i]) - sorted.begin());
  grid.rebuild_members();
  return grid;
}

/// Per-voxel displacement over time. Layout: values[(t * voxels + v) * 3 + axis].
struct VoxelMotion {
  std::size_t frames = 0;
  std::size_t voxels = 0;
  std::vector<double> values;

  VoxelMotion() = default;
  VoxelMotion(std::size_t frame_count, std::size_t voxel_count)
      : frames(frame_count), voxels(voxel_count), values(frame_count * voxel_count * 3, 0.0) {}

  double& at(std::size_t t, std::size_t v, int axis) { return values[(t * voxels + v) * 3 + axis]; }
  double at(std::size_t t, std::size_t v, int axis) const { return values[(t * voxels + v) * 3 + axis]; }
};

/// Mean displacement of each voxel's member vertices, frame by frame.
inline VoxelMotion voxelize_motion(const MotionSequence& motion, const SparseVoxelGrid& grid) {
  if (motion.vertices != grid.vertex_count())
    fail_data("motion has " + std::to_string(motion.vertices) + " vertices, grid has " +
              std::to_string(grid.vertex_count()));
  const std::size_t n = grid.voxel_count();
  VoxelMotion out(motion.frames, n);
  parallel_for(0, motion.frames, [&](std::size_t t) {
    const double* src = motion.frame(t);
    double* dst = out.values.data() + t * n * 3;
    for (std::size_t v = 0; v < n; ++v) {
      double sx = 0.0, sy = 0.0, sz = 0.0;
      auto members = grid.members(v);
      for (auto i : members) {
        sx += src[3 * i];
        sy += src[3 * i + 1];
        sz += src[3 * i + 2];
      }
      const auto count = static_cast<double>(members.size());
      dst[3 * v] = sx / count;
      dst[3 * v + 1] = sy / count;
      dst[3 * v + 2] = sz / count;
    }
  }, 1);
  return out;
}

/// Copies each voxel's payload to every vertex it owns.
template <typename T>
std::vector<T> devoxelize(std::span<const T> values, const SparseVoxelGrid& grid) {
  if (values.size() != grid.voxel_count())
    fail_data("payload has " + std::to_string(values.size()) + " entries, grid has " +
              std::to_string(grid.voxel_count()) + " voxels");
  std::vector<T> out;
  out.reserve(grid.vertex_count());
  for (auto v : grid.vertex_to_voxel) out.push_back(values[v]);
  return out;
}

template <typename T>
std::vector<T> devoxelize(const std::vector<T>& values, const SparseVoxelGrid& grid) {
  return devoxelize(std::span<const T>(values), grid);
}

/// Devoxelizes packed xyz triples (voxel_xyz has 3n entries) into vertex_xyz (3N entries).
inline void devoxelize_xyz(std::span<const double> voxel_xyz, std::span<double> vertex_xyz, const SparseVoxelGrid& grid) {
  if (voxel_xyz.size() != 3 * grid.voxel_count() || vertex_xyz.size() != 3 * grid.vertex_count())
    fail_data("devoxelize: payload size mismatch");
  const std::uint32_t* owner = grid.vertex_to_voxel.data();
  parallel_for(0, grid.vertex_count(), [&](std::size_t i) {
    const double* s = voxel_xyz.data() + 3 * owner[i];
    double* d = vertex_xyz.data() + 3 * i;
    d[0] = s[0];
    d[1] = s[1];
    d[2] = s[2];
  }, 1 << 15);
}

inline MotionSequence devoxelize_motion(const VoxelMotion& motion, const SparseVoxelGrid& grid, double fps) {
  if (motion.voxels != grid.voxel_count()) fail_data("voxel motion does not match grid");
  MotionSequence out(motion.frames, grid.vertex_count(), fps);
  const std::size_t n = motion.voxels;
  for (std::size_t t = 0; t < motion.frames; ++t)
    devoxelize_xyz(std::span<const double>(motion.values.data() + t * n * 3, n * 3),
                   std::span<double>(out.frame(t), out.vertices * 3), grid);
  return out;
}

}  // namespace spectree

#endif  // SPECTREE_VOXEL_HPP
