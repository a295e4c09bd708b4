#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include <spectree/synth.hpp>

#include "test_support.hpp"

using namespace spectree;
namespace st = spectree::testing;

namespace {

// Root plus one child leaning along +x, tuned to a known oscillator.
BranchSkeleton two_node_skeleton(double stiffness = 40.0, double damping = 2.0, double inertia = 1.0) {
  BranchSkeleton sk;
  BranchNode root;
  root.direction = Vec3::UnitZ();
  root.length = 1.0;
  assign_bend_axes(root);
  sk.nodes.push_back(root);
  BranchNode child;
  child.parent = 0;
  child.level = 1;
  child.base = Vec3(0, 0, 1);
  child.direction = Vec3(1, 0, 1).normalized();
  child.length = 0.8;
  child.radius = 0.05;
  child.stiffness = stiffness;
  child.damping = damping;
  child.inertia = inertia;
  assign_bend_axes(child);
  sk.nodes.push_back(child);
  return sk;
}

std::size_t count_recursive(const std::vector<std::vector<std::uint32_t>>& kids, std::uint32_t node) {
  std::size_t total = 1;
  for (auto c : kids[node]) total += count_recursive(kids, c);
  return total;
}

}  // namespace

TEST(GrowTree, SingleTrunk) {
  SynthParams p;
  p.depth = 1;
  p.min_branches = p.max_branches = 0;
  auto tree = grow_tree(p);
  EXPECT_EQ(tree.skeleton.nodes.size(), 1u);
  EXPECT_TRUE(tree.skeleton.leaves.empty());
  EXPECT_EQ(tree.mesh.vertex_count(), 2u * static_cast<std::size_t>(p.ring_sides));
  EXPECT_EQ(tree.mesh.face_count(), 2u * static_cast<std::size_t>(p.ring_sides));
}

TEST(GrowTree, DeterministicForSeed) {
  SynthParams p;
  p.seed = 42;
  auto a = grow_tree(p), b = grow_tree(p);
  ASSERT_EQ(a.mesh.vertex_count(), b.mesh.vertex_count());
  EXPECT_EQ(std::memcmp(a.mesh.vertices.data(), b.mesh.vertices.data(), a.mesh.vertex_count() * sizeof(Vec3)), 0);
  EXPECT_EQ(a.mesh.faces, b.mesh.faces);
  p.seed = 43;
  auto c = grow_tree(p);
  EXPECT_FALSE(c.mesh.vertex_count() == a.mesh.vertex_count() &&
               std::memcmp(a.mesh.vertices.data(), c.mesh.vertices.data(), a.mesh.vertex_count() * sizeof(Vec3)) == 0);
}

TEST(GrowTree, NodeCountWithinCombinatorialBounds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthParams p;
    p.depth = 3;
    p.min_branches = 2;
    p.max_branches = 3;
    p.seed = seed;
    auto tree = grow_tree(p);
    const auto& nodes = tree.skeleton.nodes;
    EXPECT_GE(nodes.size(), 1u + 2 + 4);
    EXPECT_LE(nodes.size(), 1u + 3 + 9);
    auto kids = tree.skeleton.children();
    EXPECT_EQ(count_recursive(kids, 0), nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].level < p.depth - 1) {
        EXPECT_GE(kids[i].size(), 2u);
        EXPECT_LE(kids[i].size(), 3u);
      } else {
        EXPECT_TRUE(kids[i].empty());
      }
      if (i > 0) EXPECT_LT(nodes[i].parent, static_cast<int>(i));
    }
  }
}

TEST(GrowTree, MeshIsValidAndFullySkinned) {
  SynthParams p;
  p.depth = 4;
  auto tree = grow_tree(p);
  EXPECT_NO_THROW(tree.mesh.validate());
  EXPECT_EQ(tree.skin.size(), tree.mesh.vertex_count());
  for (std::size_t f = 0; f < tree.mesh.face_count(); ++f) EXPECT_GT(tree.mesh.face_area(f), kMinFaceArea);
  EXPECT_EQ(tree.skeleton.leaves.size() % static_cast<std::size_t>(p.leaves_per_terminal), 0u);
}

TEST(GrowTree, RejectsBadParams) {
  SynthParams p;
  p.depth = 7;
  EXPECT_THROW(grow_tree(p), Error);
  p = {};
  p.length_ratio = 0.0;
  EXPECT_THROW(grow_tree(p), Error);
  p = {};
  p.min_branches = 3;
  p.max_branches = 2;
  EXPECT_THROW(grow_tree(p), Error);
}

TEST(SimulateWind, ZeroWindStaysAtRest) {
  SynthParams p;
  auto tree = grow_tree(p);
  WindField calm;
  calm.speed = 0.0;
  auto traj = simulate_wind(tree.skeleton, calm, 50, 24.0);
  for (double a : traj.angles) EXPECT_EQ(a, 0.0);
}

TEST(SimulateWind, ConstantWindReachesStaticDeflection) {
  auto sk = two_node_skeleton();
  const auto& child = sk.nodes[1];
  WindField wind;
  wind.direction = Vec3::UnitY();
  wind.speed = 3.0;
  const double fps = 240.0;
  const double settle = 10.0 / (child.damping / (2.0 * child.inertia));
  const auto frames = static_cast<std::size_t>(std::ceil(settle * fps)) + 2;
  auto traj = simulate_wind(sk, wind, frames, fps);
  // Oracle: torque = d x F with F = 0.5 s^2 (2 r L) y, static deflection tau / k per axis.
  const Vec3 force = 0.5 * 9.0 * (child.length * 2.0 * child.radius) * Vec3::UnitY();
  const Vec3 torque = child.direction.cross(force);
  const Eigen::Vector2d expected(torque.dot(child.bend_axes[0]) / child.stiffness,
                                 torque.dot(child.bend_axes[1]) / child.stiffness);
  const Eigen::Vector2d got = traj.angle(frames - 1, 1);
  EXPECT_LE((got - expected).norm(), 0.01 * expected.norm());
  EXPECT_EQ(traj.angle(frames - 1, 0), Eigen::Vector2d::Zero());
}

TEST(SimulateWind, GustResponseMatchesTransferFunction) {
  auto sk = two_node_skeleton(40.0, 1.2, 1.0);
  const auto& child = sk.nodes[1];
  const double fps = 2000.0;
  const double f = 0.7;
  const double omega = 2.0 * std::numbers::pi * f;
  WindField wind;
  wind.direction = Vec3::UnitY();
  wind.speed = 4.0;
  wind.gusts.push_back({0.5, f, 0.0});
  // speed^2 = U^2 + 2 U a sin(wt) + a^2/2 (1 - cos 2wt); project the response on the w component.
  const double settle = 12.0 / (child.damping / (2.0 * child.inertia));
  const double periods = 10.0;
  const auto start = static_cast<std::size_t>(std::ceil(settle * fps));
  const auto span = static_cast<std::size_t>(std::llround(periods * fps / f));
  auto traj = simulate_wind(sk, wind, start + span + 1, fps);
  const Vec3 unit_force = 0.5 * (child.length * 2.0 * child.radius) * Vec3::UnitY();
  const double gain = child.direction.cross(unit_force).dot(child.bend_axes[0]);
  double s = 0, c = 0;
  for (std::size_t t = start; t < start + span; ++t) {
    const double time = static_cast<double>(t) / fps;
    s += traj.angle(t, 1).x() * std::sin(omega * time);
    c += traj.angle(t, 1).x() * std::cos(omega * time);
  }
  const double measured = 2.0 * std::hypot(s, c) / static_cast<double>(span);
  const double k = child.stiffness, m = child.inertia, cd = child.damping;
  const double h = 1.0 / std::sqrt(std::pow(k - m * omega * omega, 2) + std::pow(cd * omega, 2));
  const double expected = std::abs(gain) * 2.0 * wind.speed * 0.5 * h;
  EXPECT_NEAR(measured, expected, 0.05 * expected);
}

TEST(SimulateWind, FreeDecayEnergyNeverIncreases) {
  SynthParams p;
  p.seed = 3;
  auto tree = grow_tree(p);
  WindField wind;
  wind.speed = 6.0;
  wind.gusts.push_back({1.5, 0.4, 0.3});
  wind.cutoff_time = 3.0;
  auto traj = simulate_wind(tree.skeleton, wind, 200, 24.0);
  const std::size_t off = static_cast<std::size_t>(3.0 * 24.0) + 1;
  double prev = oscillator_energy(tree.skeleton, traj, off);
  EXPECT_GT(prev, 0.0);
  for (std::size_t t = off + 1; t < traj.frames; ++t) {
    const double e = oscillator_energy(tree.skeleton, traj, t);
    EXPECT_LE(e, prev * (1.0 + 1e-12));
    prev = e;
  }
}

TEST(SimulateWind, DetectsInstability) {
  auto sk = two_node_skeleton(1e4, 1.0, 1.0);
  WindField wind;
  EXPECT_THROW(simulate_wind(sk, wind, 10, 24.0), Error);
  EXPECT_THROW(simulate_wind(two_node_skeleton(), wind, 1, 24.0), Error);
}

TEST(SkinMotion, ZeroAnglesGiveZeroMotion) {
  auto tree = grow_tree(SynthParams{});
  AngleTrajectories traj(10, tree.skeleton.nodes.size(), 24.0);
  auto m = skin_motion(tree.skeleton, traj, tree.mesh, tree.skin);
  for (double v : m.values) EXPECT_EQ(v, 0.0);
}

TEST(SkinMotion, RigidRotationOracle) {
  auto sk = two_node_skeleton();
  TriMesh mesh;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 20; ++i) mesh.vertices.emplace_back(u(rng), u(rng), 1.0 + u(rng));
  std::vector<std::uint32_t> skin(mesh.vertex_count(), 1);
  AngleTrajectories traj(3, 2, 24.0);
  traj.set(2, 1, Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d::Zero());
  auto m = skin_motion(sk, traj, mesh, skin);
  const Vec3 axis_vec = 0.3 * sk.nodes[1].bend_axes[0] - 0.2 * sk.nodes[1].bend_axes[1];
  const Mat3 rot = Eigen::AngleAxisd(axis_vec.norm(), axis_vec.normalized()).toRotationMatrix();
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3 expected = rot * (mesh.vertices[i] - sk.nodes[1].base) + sk.nodes[1].base;
    EXPECT_LE((mesh.vertices[i] + m.displacement(2, i) - expected).norm(), 1e-9);
    EXPECT_EQ(m.displacement(1, i), Vec3::Zero());
  }
  skin[3] = 7;
  EXPECT_THROW(skin_motion(sk, traj, mesh, skin), Error);
}

TEST(SkinMotion, OnlyChildMovesAndRootAnchored) {
  SynthParams p;
  p.depth = 2;
  p.min_branches = p.max_branches = 1;
  auto tree = grow_tree(p);
  ASSERT_EQ(tree.skeleton.nodes.size(), 2u);
  AngleTrajectories traj(4, 2, 24.0);
  for (std::size_t t = 1; t < 4; ++t) traj.set(t, 1, Eigen::Vector2d(0.1 * t, 0.05), Eigen::Vector2d::Zero());
  auto m = skin_motion(tree.skeleton, traj, tree.mesh, tree.skin);
  bool child_moved = false;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < tree.mesh.vertex_count(); ++i) {
      if (tree.skin[i] == 0) EXPECT_EQ(m.displacement(t, i), Vec3::Zero());
      else if (t > 0) child_moved |= m.displacement(t, i).norm() > 1e-6;
    }
  EXPECT_TRUE(child_moved);
}

TEST(SkinMotion, WindAnimationProperties) {
  SynthParams p;
  p.seed = 9;
  auto tree = grow_tree(p);
  WindField wind;
  wind.speed = 5.0;
  wind.gusts.push_back({1.0, 0.3, 0.0});
  wind.turbulence = 0.3;
  wind.turbulence_seed = 4;
  auto traj = simulate_wind(tree.skeleton, wind, 100, 24.0);
  LeafFlutter flutter{0.05, 1.5};
  auto m = skin_motion(tree.skeleton, traj, tree.mesh, tree.skin, tree.leaf_of_vertex, flutter);
  EXPECT_NO_THROW(m.validate());

  double span = 0;
  for (const auto& v : tree.mesh.vertices) span = std::max(span, (v - tree.skeleton.nodes[0].base).norm());
  for (std::size_t t = 0; t < m.frames; ++t)
    for (std::size_t i = 0; i < m.vertices; ++i)
      if (tree.skin[i] == 0) ASSERT_EQ(m.displacement(t, i), Vec3::Zero());

  // Per-frame motion is bounded by the summed angle change along the whole tree
  // (plus flutter) times the tree span: no teleports.
  for (std::size_t t = 1; t < m.frames; ++t) {
    double turn = 2.0 * flutter.amplitude * 2.0 * std::numbers::pi * flutter.frequency / 24.0;
    for (std::size_t j = 0; j < traj.nodes; ++j) turn += (traj.angle(t, j) - traj.angle(t - 1, j)).norm();
    double worst = 0;
    for (std::size_t i = 0; i < m.vertices; ++i)
      worst = std::max(worst, (m.displacement(t, i) - m.displacement(t - 1, i)).norm());
    EXPECT_LE(worst, turn * span * (1 + 1e-9));
  }
}

TEST(Curate, AcceptsBandLimitedAndStatic) {
  std::mt19937_64 rng(5);
  auto mesh = st::random_mesh(rng, 400, 10);
  auto grid = build_grid(mesh, 16);
  auto smooth = st::band_limited_motion(rng, mesh.vertex_count(), 100, 10);
  auto r = curate(smooth, grid);
  EXPECT_TRUE(r.accepted);
  EXPECT_NEAR(r.hf_ratio, 0.0, 1e-12);
  auto still = curate(MotionSequence(100, mesh.vertex_count(), 24.0), grid);
  EXPECT_TRUE(still.accepted);
  EXPECT_EQ(still.hf_ratio, 0.0);
}

TEST(Curate, RejectsInjectedNoise) {
  auto tree = grow_tree(SynthParams{});
  WindField wind;
  wind.speed = 5.0;
  auto motion = skin_motion(tree.skeleton, simulate_wind(tree.skeleton, wind, 100, 24.0), tree.mesh, tree.skin);
  auto grid = build_grid(tree.mesh, 64);
  EXPECT_TRUE(curate(motion, grid).accepted);
  // Per-frame white noise with the same RMS as the clean motion.
  double rms = 0;
  for (double v : motion.values) rms += v * v;
  rms = std::sqrt(rms / static_cast<double>(motion.values.size()));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, rms);
  for (std::size_t i = motion.vertices * 3; i < motion.values.size(); ++i) motion.values[i] += g(rng);
  auto r = curate(motion, grid);
  EXPECT_FALSE(r.accepted);
  EXPECT_GT(r.hf_ratio, 0.1);
}
