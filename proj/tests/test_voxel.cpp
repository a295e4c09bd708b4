#include <random>

#include <gtest/gtest.h>

#include <spectree/voxel.hpp>

#include "test_support.hpp"

using namespace spectree;
namespace st = spectree::testing;

namespace {

TriMesh points_mesh(std::vector<Vec3> pts) {
  TriMesh m;
  m.vertices = std::move(pts);
  return m;
}

}  // namespace

TEST(BuildGrid, SingleVertex) {
  auto grid = build_grid(points_mesh({Vec3(1, 2, 3)}), 128);
  EXPECT_EQ(grid.voxel_count(), 1u);
  EXPECT_EQ(grid.vertex_to_voxel[0], 0u);
}

TEST(BuildGrid, OppositeCornersSeparate) {
  auto grid = build_grid(points_mesh({Vec3(0, 0, 0), Vec3(1, 1, 1)}), 2);
  ASSERT_EQ(grid.voxel_count(), 2u);
  EXPECT_NE(grid.vertex_to_voxel[0], grid.vertex_to_voxel[1]);
  EXPECT_EQ(grid.occupied[0], (VoxelCoord{0, 0, 0}));
  EXPECT_EQ(grid.occupied[1], (VoxelCoord{1, 1, 1}));
}

TEST(BuildGrid, RejectsUnsupportedResolution) {
  auto mesh = points_mesh({Vec3(0, 0, 0)});
  EXPECT_THROW(build_grid(mesh, 100), Error);
  EXPECT_THROW(build_grid(mesh, 1024), Error);
  EXPECT_THROW(build_grid(TriMesh{}, 128), Error);
}

TEST(BuildGrid, BoundaryVertexBelongsToLowerCell) {
  // With R=2 the cells are [-0.5, 0.5) and [0.5, 1.5) along each axis.
  auto grid = build_grid(points_mesh({Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(0.5, 0.0, 0.0)}), 2);
  EXPECT_EQ(grid.occupied[grid.vertex_to_voxel[2]], (VoxelCoord{1, 0, 0}));
  auto grid2 = build_grid(points_mesh({Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(0.4999999, 0.0, 0.0)}), 2);
  EXPECT_EQ(grid2.occupied[grid2.vertex_to_voxel[2]], (VoxelCoord{0, 0, 0}));
}

TEST(BuildGrid, MatchesBruteForceQuantization) {
  std::mt19937_64 rng(77);
  for (std::uint32_t r : {32u, 64u, 128u}) {
    auto mesh = st::random_mesh(rng, 10000, 10, 2.5);
    auto grid = build_grid(mesh, r);
    auto buckets = st::bucket_vertices(mesh, r);
    EXPECT_EQ(grid.voxel_count(), buckets.size());
    EXPECT_LE(grid.voxel_count(), std::min<std::size_t>(mesh.vertex_count(), std::size_t{r} * r * r));
    for (const auto& [key, members] : buckets) {
      const auto owner = grid.vertex_to_voxel[members.front()];
      const auto& c = grid.occupied[owner];
      EXPECT_EQ(c[0], key[0]);
      EXPECT_EQ(c[1], key[1]);
      EXPECT_EQ(c[2], key[2]);
      for (auto i : members) EXPECT_EQ(grid.vertex_to_voxel[i], owner);
      EXPECT_EQ(grid.members(owner).size(), members.size());
    }
  }
}

TEST(BuildGrid, PartitionProperty) {
  std::mt19937_64 rng(3);
  auto mesh = st::random_mesh(rng, 2000, 10);
  auto grid = build_grid(mesh, 32);
  std::size_t total = 0;
  for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
    ASSERT_GE(grid.members(v).size(), 1u);
    total += grid.members(v).size();
    for (auto c : grid.occupied[v]) EXPECT_LT(c, 32);
  }
  EXPECT_EQ(total, mesh.vertex_count());
}

TEST(VoxelizeMotion, SingletonAndTwoPointMean) {
  // Vertices 0 and 1 share a cell; vertex 2 is alone.
  auto grid = build_grid(points_mesh({Vec3(0, 0, 0), Vec3(0.01, 0, 0), Vec3(1, 1, 1)}), 2);
  ASSERT_EQ(grid.voxel_count(), 2u);
  MotionSequence m(2, 3, 24.0);
  m.set(1, 0, Vec3(1, 0, 0));
  m.set(1, 1, Vec3(3, 0, 0));
  m.set(1, 2, Vec3(0.25, -0.5, 4));
  auto vm = voxelize_motion(m, grid);
  const auto shared = grid.vertex_to_voxel[0];
  const auto single = grid.vertex_to_voxel[2];
  EXPECT_EQ(vm.at(1, shared, 0), 2.0);
  EXPECT_EQ(vm.at(1, single, 0), 0.25);
  EXPECT_EQ(vm.at(1, single, 1), -0.5);
  EXPECT_EQ(vm.at(1, single, 2), 4.0);
}

TEST(VoxelizeMotion, CountMismatch) {
  auto grid = build_grid(points_mesh({Vec3(0, 0, 0)}), 32);
  MotionSequence m(2, 2, 24.0);
  EXPECT_THROW(voxelize_motion(m, grid), Error);
}

TEST(VoxelizeMotion, MatchesGroupbyOracle) {
  std::mt19937_64 rng(21);
  auto mesh = st::random_mesh(rng, 3000, 10);
  auto grid = build_grid(mesh, 32);
  auto motion = st::band_limited_motion(rng, mesh.vertex_count(), 20, 5);
  auto vm = voxelize_motion(motion, grid);
  for (const auto& [key, members] : st::bucket_vertices(mesh, 32)) {
    const auto v = grid.vertex_to_voxel[members.front()];
    for (std::size_t t = 0; t < motion.frames; ++t)
      for (int a = 0; a < 3; ++a) {
        double sum = 0;
        for (auto i : members) sum += motion.at(t, i, a);
        EXPECT_NEAR(vm.at(t, v, a), sum / static_cast<double>(members.size()), 1e-12);
      }
  }
}

TEST(Devoxelize, BroadcastAndIdentityMap) {
  std::mt19937_64 rng(8);
  auto single = build_grid(points_mesh({Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3(1, 0, 0)}), 2);
  auto all = devoxelize(std::vector<int>{42}, single);
  EXPECT_EQ(all, (std::vector<int>{42, 42, 42}));

  auto mesh = st::random_mesh(rng, 500, 10);
  auto grid = build_grid(mesh, 16);
  std::vector<std::uint32_t> ids(grid.voxel_count());
  for (std::size_t v = 0; v < ids.size(); ++v) ids[v] = static_cast<std::uint32_t>(v);
  EXPECT_EQ(devoxelize(ids, grid), grid.vertex_to_voxel);
  EXPECT_THROW(devoxelize(std::vector<int>(ids.size() + 1), grid), Error);
}

TEST(Devoxelize, ExactInverseWhenVoxelsAreSingletons) {
  // Lattice with unit spacing on an 8^3 grid: one vertex per voxel.
  std::vector<Vec3> pts;
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y)
      for (int z = 0; z < 8; z += 3) pts.emplace_back(x, y, z == 6 ? 7 : z);
  auto grid = build_grid(points_mesh(pts), 8);
  ASSERT_EQ(grid.voxel_count(), pts.size());
  std::mt19937_64 rng(4);
  auto motion = st::band_limited_motion(rng, pts.size(), 12, 3);
  auto round = devoxelize_motion(voxelize_motion(motion, grid), grid, motion.fps);
  EXPECT_EQ(round.values, motion.values);
}

TEST(Devoxelize, ProjectionPropertiesOnSharedVoxels) {
  std::mt19937_64 rng(17);
  auto mesh = st::random_mesh(rng, 4000, 10);
  auto grid = build_grid(mesh, 16);
  auto motion = st::band_limited_motion(rng, mesh.vertex_count(), 16, 4);
  auto once = devoxelize_motion(voxelize_motion(motion, grid), grid, motion.fps);
  auto twice = devoxelize_motion(voxelize_motion(once, grid), grid, motion.fps);
  for (std::size_t i = 0; i < once.values.size(); ++i) EXPECT_NEAR(once.values[i], twice.values[i], 1e-15);

  // Every vertex sharing a voxel carries the identical displacement.
  for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
    auto members = grid.members(v);
    for (std::size_t t = 0; t < once.frames; ++t)
      for (auto i : members) EXPECT_EQ(once.displacement(t, i), once.displacement(t, members[0]));
  }

  // Voxelization commutes with temporal truncation.
  MotionSequence head(8, motion.vertices, motion.fps);
  std::copy(motion.values.begin(), motion.values.begin() + static_cast<std::ptrdiff_t>(head.values.size()),
            head.values.begin());
  auto full = voxelize_motion(motion, grid);
  auto part = voxelize_motion(head, grid);
  for (std::size_t i = 0; i < part.values.size(); ++i) EXPECT_EQ(part.values[i], full.values[i]);
}
