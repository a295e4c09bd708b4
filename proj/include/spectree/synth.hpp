#ifndef SPECTREE_SYNTH_HPP
#define SPECTREE_SYNTH_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "common.hpp"
#include "mesh.hpp"
#include "spectrum.hpp"
#include "voxel.hpp"

namespace spectree {

// ---------------------------------------------------------------------------
// Skeleton

/// One branch segment. Bending happens about `bend_axes`, both perpendicular
/// to the rest direction, around the segment base.
struct BranchNode {
  int parent = -1;
  int level = 0;
  Vec3 base = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double length = 1.0;
  double radius = 0.05;
  double stiffness = 1.0;  // torque per radian
  double damping = 0.1;
  double inertia = 1.0;
  std::array<Vec3, 2> bend_axes{Vec3::UnitX(), Vec3::UnitY()};

  Vec3 tip() const { return base + length * direction; }
  double natural_frequency() const { return std::sqrt(stiffness / inertia); }
};

struct LeafCard {
  std::uint32_t node = 0;
  Vec3 anchor = Vec3::Zero();  // attachment point, rest coordinates
  double size = 0.1;
};

struct BranchSkeleton {
  std::vector<BranchNode> nodes;
  std::vector<LeafCard> leaves;

  std::vector<std::vector<std::uint32_t>> children() const {
    std::vector<std::vector<std::uint32_t>> out(nodes.size());
    for (std::size_t i = 1; i < nodes.size(); ++i) out[static_cast<std::size_t>(nodes[i].parent)].push_back(static_cast<std::uint32_t>(i));
    return out;
  }

  void validate() const {
    if (nodes.empty() || nodes[0].parent != -1) fail_data("skeleton needs a root at index 0");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      if (i > 0 && (n.parent < 0 || static_cast<std::size_t>(n.parent) >= i))
        fail_data("skeleton node " + std::to_string(i) + " is not in topological order");
      if (!(n.length > 0 && n.radius > 0 && n.stiffness > 0 && n.damping > 0 && n.inertia > 0))
        fail_data("skeleton node " + std::to_string(i) + " has a non-positive physical parameter");
    }
    for (const auto& l : leaves)
      if (l.node >= nodes.size()) fail_data("leaf card references a missing node");
  }
};

/// Sets the two bend axes of a node from its rest direction.
inline void assign_bend_axes(BranchNode& node) {
  const Vec3 d = node.direction.normalized();
  const Vec3 helper = std::abs(d.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  node.bend_axes[0] = helper.cross(d).normalized();
  node.bend_axes[1] = d.cross(node.bend_axes[0]).normalized();
}

/// Mechanical constants used when growing a tree.
struct BranchMaterial {
  double density = 800.0;           // mass per unit volume
  double trunk_frequency_hz = 0.45;
  double frequency_growth = 1.3;    // per branching level
  double max_frequency_hz = 1.6;
  double damping_ratio = 0.15;
};

/// Fills stiffness, damping and inertia of a node from its geometry: a rod
/// rotating about its base, tuned to a level-dependent natural frequency.
inline void assign_mechanics(BranchNode& node, const BranchMaterial& mat) {
  const double mass = mat.density * std::numbers::pi * node.radius * node.radius * node.length;
  node.inertia = mass * node.length * node.length / 3.0;
  const double f = std::min(mat.max_frequency_hz, mat.trunk_frequency_hz * std::pow(mat.frequency_growth, node.level));
  const double omega = 2.0 * std::numbers::pi * f;
  node.stiffness = node.inertia * omega * omega;
  node.damping = 2.0 * mat.damping_ratio * std::sqrt(node.stiffness * node.inertia);
}

// ---------------------------------------------------------------------------
// Growth

struct SynthParams {
  int depth = 4;
  int min_branches = 2;
  int max_branches = 3;
  double min_angle_deg = 25.0;
  double max_angle_deg = 50.0;
  double length_ratio = 0.7;
  double radius_ratio = 0.6;
  int leaves_per_terminal = 4;
  std::uint64_t seed = 0;
  double trunk_length = 2.0;
  double trunk_radius = 0.08;
  int ring_sides = 6;

  void validate() const {
    if (depth < 1 || depth > 6) fail_usage("depth must be in [1, 6]");
    if (min_branches < 0 || max_branches < min_branches) fail_usage("branches range is empty or negative");
    if (min_angle_deg < 0 || max_angle_deg < min_angle_deg || max_angle_deg > 180)
      fail_usage("branching angle range is invalid");
    if (!(length_ratio > 0 && length_ratio <= 1)) fail_usage("length_ratio must be in (0, 1]");
    if (!(radius_ratio > 0 && radius_ratio <= 1)) fail_usage("radius_ratio must be in (0, 1]");
    if (leaves_per_terminal < 0) fail_usage("leaves_per_terminal must be >= 0");
    if (!(trunk_length > 0) || !(trunk_radius > 0)) fail_usage("trunk size must be positive");
    if (ring_sides < 3) fail_usage("ring_sides must be >= 3");
  }
};

/// Skeleton plus its surface; skin[i] is the node that vertex i follows
/// and leaf_of_vertex[i] the leaf card it belongs to (or -1).
struct TreeModel {
  BranchSkeleton skeleton;
  TriMesh mesh;
  std::vector<std::uint32_t> skin;
  std::vector<std::int32_t> leaf_of_vertex;
};

namespace detail {

// Portable uniform draws; std distributions differ between standard libraries.
class SeededRandom {
public:
  explicit SeededRandom(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1) * (1.0 - 1e-12)); }

private:
  std::mt19937_64 engine_;
};

inline Vec3 rotate(const Vec3& v, const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()) * v;
}

inline void grow_children(BranchSkeleton& sk, std::uint32_t parent, const SynthParams& p, const BranchMaterial& mat,
                          SeededRandom& rng) {
  const BranchNode par = sk.nodes[parent];
  if (par.level + 1 >= p.depth) return;
  const int count = rng.integer(p.min_branches, p.max_branches);
  const double spin = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int c = 0; c < count; ++c) {
    BranchNode node;
    node.parent = static_cast<int>(parent);
    node.level = par.level + 1;
    node.base = par.base + rng.uniform(0.55, 1.0) * par.length * par.direction;
    const double azimuth = spin + 2.0 * std::numbers::pi * (c + rng.uniform(-0.2, 0.2)) / count;
    const double tilt = rng.uniform(p.min_angle_deg, p.max_angle_deg) * std::numbers::pi / 180.0;
    const Vec3 side = rotate(par.bend_axes[0], par.direction, azimuth);
    node.direction = rotate(par.direction, side, tilt).normalized();
    node.length = par.length * p.length_ratio * rng.uniform(0.85, 1.15);
    node.radius = par.radius * p.radius_ratio;
    assign_bend_axes(node);
    assign_mechanics(node, mat);
    sk.nodes.push_back(node);
    grow_children(sk, static_cast<std::uint32_t>(sk.nodes.size() - 1), p, mat, rng);
  }
}

inline void add_branch_surface(TreeModel& tree, std::uint32_t index, int sides, double taper) {
  const BranchNode& n = tree.skeleton.nodes[index];
  const auto first = static_cast<std::uint32_t>(tree.mesh.vertices.size());
  for (int ring = 0; ring < 2; ++ring) {
    const Vec3 center = ring == 0 ? n.base : n.tip();
    const double r = ring == 0 ? n.radius : n.radius * taper;
    for (int s = 0; s < sides; ++s) {
      const double a = 2.0 * std::numbers::pi * s / sides;
      tree.mesh.vertices.push_back(center + r * (std::cos(a) * n.bend_axes[0] + std::sin(a) * n.bend_axes[1]));
      tree.skin.push_back(index);
      tree.leaf_of_vertex.push_back(-1);
    }
  }
  const auto S = static_cast<std::uint32_t>(sides);
  for (std::uint32_t s = 0; s < S; ++s) {
    const std::uint32_t a = first + s, b = first + (s + 1) % S;
    tree.mesh.faces.push_back({a, b, b + S});
    tree.mesh.faces.push_back({a, b + S, a + S});
  }
}

inline void add_leaf_surface(TreeModel& tree, std::uint32_t leaf, SeededRandom& rng) {
  const LeafCard& card = tree.skeleton.leaves[leaf];
  const BranchNode& n = tree.skeleton.nodes[card.node];
  const Vec3 out = rotate(n.bend_axes[0], n.direction, rng.uniform(0.0, 2.0 * std::numbers::pi));
  const Vec3 along = (0.5 * n.direction + out).normalized();
  const Vec3 across = n.direction.cross(along).normalized();
  const auto first = static_cast<std::uint32_t>(tree.mesh.vertices.size());
  const double h = 0.5 * card.size;
  const Vec3 corners[4] = {card.anchor - h * across, card.anchor + h * across,
                           card.anchor + h * across + card.size * along, card.anchor - h * across + card.size * along};
  for (const auto& c : corners) {
    tree.mesh.vertices.push_back(c);
    tree.skin.push_back(card.node);
    tree.leaf_of_vertex.push_back(static_cast<std::int32_t>(leaf));
  }
  tree.mesh.faces.push_back({first, first + 1, first + 2});
  tree.mesh.faces.push_back({first, first + 2, first + 3});
}

}  // namespace detail

/// Grows a tree deterministically from params.seed: generalized cylinders per
/// branch plus quad leaf cards at terminal branches, every vertex rigidly
/// skinned to one node.
inline TreeModel grow_tree(const SynthParams& params, const BranchMaterial& material = {}) {
  params.validate();
  detail::SeededRandom rng(params.seed);
  TreeModel tree;
  BranchNode trunk;
  trunk.length = params.trunk_length;
  trunk.radius = params.trunk_radius;
  trunk.direction = Vec3::UnitZ();
  assign_bend_axes(trunk);
  assign_mechanics(trunk, material);
  tree.skeleton.nodes.push_back(trunk);
  detail::grow_children(tree.skeleton, 0, params, material, rng);

  const auto kids = tree.skeleton.children();
  const double leaf_size = 0.12 * params.trunk_length * std::pow(params.length_ratio, params.depth - 1);
  for (std::uint32_t i = 0; i < tree.skeleton.nodes.size(); ++i) {
    if (!kids[i].empty()) continue;
    const BranchNode& n = tree.skeleton.nodes[i];
    for (int l = 0; l < params.leaves_per_terminal; ++l)
      tree.skeleton.leaves.push_back({i, n.base + rng.uniform(0.5, 1.0) * n.length * n.direction, leaf_size});
  }
  // A single-node tree is just the trunk; it carries no leaves.
  if (tree.skeleton.nodes.size() == 1) tree.skeleton.leaves.clear();

  for (std::uint32_t i = 0; i < tree.skeleton.nodes.size(); ++i)
    detail::add_branch_surface(tree, i, params.ring_sides, params.radius_ratio);
  for (std::uint32_t l = 0; l < tree.skeleton.leaves.size(); ++l) detail::add_leaf_surface(tree, l, rng);
  tree.skeleton.validate();
  return tree;
}

// ---------------------------------------------------------------------------
// Wind

struct Gust {
  double amplitude = 0.0;
  double frequency = 0.5;  // Hz
  double phase = 0.0;
};

struct WindField {
  Vec3 direction = Vec3::UnitX();
  double speed = 4.0;
  std::vector<Gust> gusts;
  double turbulence = 0.0;  // relative amplitude of seeded low-frequency fluctuation
  std::uint64_t turbulence_seed = 0;
  double cutoff_time = std::numeric_limits<double>::infinity();  // wind is zero from here on

  void validate() const {
    if (!(direction.norm() > 0)) fail_usage("wind direction must be non-zero");
    for (const auto& g : gusts)
      if (!(g.frequency > 0) || !(g.amplitude >= 0)) fail_usage("gust frequency must be > 0 and amplitude >= 0");
    if (!(turbulence >= 0)) fail_usage("turbulence must be >= 0");
  }

  /// Wind speed at time t (seconds).
  double speed_at(double t) const {
    if (t >= cutoff_time) return 0.0;
    double s = speed;
    for (const auto& g : gusts) s += g.amplitude * std::sin(2.0 * std::numbers::pi * g.frequency * t + g.phase);
    if (turbulence > 0.0) {
      detail::SeededRandom rng(turbulence_seed);
      for (int j = 0; j < 4; ++j) {
        const double f = rng.uniform(0.05, 0.6);
        const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
        s += 0.5 * turbulence * speed * std::sin(2.0 * std::numbers::pi * f * t + ph);
      }
    }
    return s;
  }
};

/// Bend angles and rates for every node and frame.
/// Layout: angles[(t * nodes + j) * 2 + axis], likewise rates.
struct AngleTrajectories {
  std::size_t frames = 0;
  std::size_t nodes = 0;
  double fps = 24.0;
  std::vector<double> angles;
  std::vector<double> rates;

  AngleTrajectories() = default;
  AngleTrajectories(std::size_t frame_count, std::size_t node_count, double rate)
      : frames(frame_count), nodes(node_count), fps(rate), angles(frame_count * node_count * 2, 0.0),
        rates(frame_count * node_count * 2, 0.0) {}

  Eigen::Vector2d angle(std::size_t t, std::size_t j) const {
    return {angles[(t * nodes + j) * 2], angles[(t * nodes + j) * 2 + 1]};
  }
  Eigen::Vector2d rate(std::size_t t, std::size_t j) const {
    return {rates[(t * nodes + j) * 2], rates[(t * nodes + j) * 2 + 1]};
  }
  void set(std::size_t t, std::size_t j, const Eigen::Vector2d& a, const Eigen::Vector2d& r) {
    angles[(t * nodes + j) * 2] = a.x();
    angles[(t * nodes + j) * 2 + 1] = a.y();
    rates[(t * nodes + j) * 2] = r.x();
    rates[(t * nodes + j) * 2 + 1] = r.y();
  }
};

/// Aerodynamic torque on a node's two bend axes for a given wind speed:
/// a force of 0.5 * speed^2 * (length * 2 * radius) along the wind component
/// perpendicular to the branch, turned into torque by d x F.
inline Eigen::Vector2d wind_torque(const BranchNode& node, const Vec3& wind_dir, double speed) {
  const Vec3 w = wind_dir.normalized();
  const Vec3 perp = w - w.dot(node.direction) * node.direction;
  const Vec3 force = 0.5 * speed * speed * (node.length * 2.0 * node.radius) * perp;
  const Vec3 torque = node.direction.cross(force);
  return {torque.dot(node.bend_axes[0]), torque.dot(node.bend_axes[1])};
}

/// Largest dt * sqrt(k / I) over the skeleton.
inline double stability_number(const BranchSkeleton& sk, double fps) {
  double worst = 0.0;
  for (const auto& n : sk.nodes) worst = std::max(worst, n.natural_frequency() / fps);
  return worst;
}

/// Integrates every non-root node's damped bend oscillator with semi-implicit
/// Euler at dt = 1/fps. The root is clamped. Coupling between nodes is
/// kinematic only (applied in skin_motion), so each node evolves on its own.
inline AngleTrajectories simulate_wind(const BranchSkeleton& skeleton, const WindField& wind, std::size_t frames,
                                       double fps) {
  skeleton.validate();
  wind.validate();
  if (frames < 2) fail_usage("simulation needs at least 2 frames");
  if (!(fps > 0)) fail_usage("fps must be positive");
  const double dt = 1.0 / fps;
  for (std::size_t j = 1; j < skeleton.nodes.size(); ++j)
    if (skeleton.nodes[j].natural_frequency() * dt >= 2.0)
      fail_usage("node " + std::to_string(j) + " is too stiff for dt=" + std::to_string(dt) +
                 " (dt*sqrt(k/I) must be < 2)");

  AngleTrajectories out(frames, skeleton.nodes.size(), fps);
  std::vector<Eigen::Vector2d> theta(skeleton.nodes.size(), Eigen::Vector2d::Zero());
  std::vector<Eigen::Vector2d> rate(skeleton.nodes.size(), Eigen::Vector2d::Zero());
  for (std::size_t t = 1; t < frames; ++t) {
    const double speed = wind.speed_at(static_cast<double>(t - 1) * dt);
    for (std::size_t j = 1; j < skeleton.nodes.size(); ++j) {
      const BranchNode& n = skeleton.nodes[j];
      const Eigen::Vector2d torque = wind_torque(n, wind.direction, speed);
      rate[j] += dt * (torque - n.stiffness * theta[j] - n.damping * rate[j]) / n.inertia;
      theta[j] += dt * rate[j];
      if (!(theta[j].norm() <= std::numbers::pi / 2))
        fail_runtime("unstable integration at node " + std::to_string(j) + " (bend exceeds pi/2)");
      out.set(t, j, theta[j], rate[j]);
    }
  }
  return out;
}

/// Elastic plus kinetic energy of all bend oscillators at frame t.
inline double oscillator_energy(const BranchSkeleton& skeleton, const AngleTrajectories& traj, std::size_t t) {
  double e = 0.0;
  for (std::size_t j = 0; j < skeleton.nodes.size(); ++j) {
    const auto& n = skeleton.nodes[j];
    e += 0.5 * n.inertia * traj.rate(t, j).squaredNorm() + 0.5 * n.stiffness * traj.angle(t, j).squaredNorm();
  }
  return e;
}

// ---------------------------------------------------------------------------
// Skinning

/// Optional independent leaf flutter: each card swings about its anchor.
struct LeafFlutter {
  double amplitude = 0.0;  // radians
  double frequency = 1.5;  // Hz
};

/// Rigid per-node transform of the surface: node j rotates by its bend about
/// its base, composed with every ancestor's transform.
inline MotionSequence skin_motion(const BranchSkeleton& skeleton, const AngleTrajectories& traj, const TriMesh& mesh,
                                  const std::vector<std::uint32_t>& skin,
                                  const std::vector<std::int32_t>& leaf_of_vertex = {}, const LeafFlutter& flutter = {}) {
  if (traj.nodes != skeleton.nodes.size()) fail_data("trajectories do not match the skeleton");
  if (skin.size() != mesh.vertex_count()) fail_data("skinning map does not match the mesh");
  for (auto s : skin)
    if (s >= skeleton.nodes.size()) fail_data("skinning index " + std::to_string(s) + " out of range");
  const bool flutters = flutter.amplitude != 0.0 && !leaf_of_vertex.empty();
  if (flutters && leaf_of_vertex.size() != mesh.vertex_count()) fail_data("leaf map does not match the mesh");

  const std::size_t nodes = skeleton.nodes.size();
  MotionSequence out(traj.frames, mesh.vertex_count(), traj.fps);
  std::vector<Mat3> world(nodes);
  std::vector<Vec3> shift(nodes);  // displacement of each node base
  std::vector<Mat3> leaf_rot(skeleton.leaves.size(), Mat3::Identity());

  for (std::size_t t = 1; t < traj.frames; ++t) {
    for (std::size_t j = 0; j < nodes; ++j) {
      const BranchNode& n = skeleton.nodes[j];
      const Eigen::Vector2d a = traj.angle(t, j);
      const Vec3 axis = a.x() * n.bend_axes[0] + a.y() * n.bend_axes[1];
      const double angle = axis.norm();
      const Mat3 local = angle > 0.0 ? Eigen::AngleAxisd(angle, axis / angle).toRotationMatrix() : Mat3::Identity();
      if (n.parent < 0) {
        world[j] = local;
        shift[j].setZero();
      } else {
        const auto p = static_cast<std::size_t>(n.parent);
        world[j] = world[p] * local;
        shift[j] = (world[p] - Mat3::Identity()) * (n.base - skeleton.nodes[p].base) + shift[p];
      }
    }
    if (flutters) {
      const double time = static_cast<double>(t) / traj.fps;
      for (std::size_t l = 0; l < skeleton.leaves.size(); ++l) {
        const BranchNode& n = skeleton.nodes[skeleton.leaves[l].node];
        const double phase = 2.0 * std::numbers::pi * std::fmod(0.6180339887498949 * static_cast<double>(l + 1), 1.0);
        const double ang = flutter.amplitude *
                           (std::sin(2.0 * std::numbers::pi * flutter.frequency * time + phase) - std::sin(phase));
        leaf_rot[l] = Eigen::AngleAxisd(ang, n.direction).toRotationMatrix();
      }
    }
    for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
      const std::uint32_t j = skin[i];
      const BranchNode& n = skeleton.nodes[j];
      Vec3 local = mesh.vertices[i] - n.base;
      Vec3 extra = Vec3::Zero();
      if (flutters && leaf_of_vertex[i] >= 0) {
        const auto l = static_cast<std::size_t>(leaf_of_vertex[i]);
        const Vec3 arm = mesh.vertices[i] - skeleton.leaves[l].anchor;
        extra = (leaf_rot[l] - Mat3::Identity()) * arm;
      }
      out.set(t, i, (world[j] - Mat3::Identity()) * local + world[j] * extra + shift[j]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curation

struct CurationResult {
  bool accepted = true;
  double hf_ratio = 0.0;
};

constexpr std::size_t kDefaultCurationCut = 16;
constexpr double kDefaultCurationThreshold = 0.1;

/// Automatic filtering: reject motion whose high-frequency energy fraction
/// (bins >= cut of the voxelized motion) exceeds the threshold.
inline CurationResult curate(const MotionSequence& motion, const SparseVoxelGrid& grid,
                             std::size_t cut = kDefaultCurationCut, double threshold = kDefaultCurationThreshold) {
  const double ratio = hf_energy_ratio(voxelize_motion(motion, grid), cut);
  return {ratio <= threshold, ratio};
}

}  // namespace spectree

#endif  // SPECTREE_SYNTH_HPP
