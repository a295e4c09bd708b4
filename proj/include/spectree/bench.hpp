#ifndef SPECTREE_BENCH_HPP
#define SPECTREE_BENCH_HPP

#include <random>
#include <set>

#include <json.hpp>

#include "engine.hpp"

namespace spectree {

/// Shape of the pinned performance instance.
struct BenchSpec {
  std::size_t voxels = 20000;
  std::size_t vertices_per_voxel = 5;
  std::size_t faces_per_voxel = 2;
  std::uint32_t per_face = 5;
  std::size_t bins = 16;
  std::size_t frames = 100;  // T of the spectrum
  std::uint32_t resolution = 128;
  std::size_t steps = 100;   // measured frames
  std::uint64_t seed = 1;

  void validate() const {
    if (vertices_per_voxel < 3) fail_usage("bench needs at least 3 vertices per voxel");
    if (faces_per_voxel < 1 || faces_per_voxel > vertices_per_voxel - 2)
      fail_usage("bench faces per voxel must be in [1, vertices_per_voxel - 2]");
    const auto cells = static_cast<std::size_t>(resolution) * resolution * resolution;
    if (voxels < 2 || voxels > cells) fail_usage("bench voxel count does not fit the lattice");
    if (steps < 1) fail_usage("bench needs at least one frame");
  }
};

struct BenchInstance {
  TriMesh mesh;
  SparseVoxelSpectrum spectrum;
};

/// Distinct lattice cells, always including the two opposite corners so the
/// grid's voxel size is exactly 1. Each cell gets one vertex at its integer
/// center and the rest jittered by less than half a cell, so every cluster
/// lands in exactly its own voxel.
inline BenchInstance make_bench_instance(const BenchSpec& pinned) {
  pinned.validate();
  std::mt19937_64 rng(pinned.seed);
  const std::int64_t last = pinned.resolution - 1;
  std::uniform_int_distribution<std::int64_t> coord(0, last);
  std::set<std::array<std::int64_t, 3>> cells{{0, 0, 0}, {last, last, last}};
  while (cells.size() < pinned.voxels) cells.insert({coord(rng), coord(rng), coord(rng)});
  std::uniform_real_distribution<double> jitter(-0.45, 0.45);
  BenchInstance inst;
  auto& mesh = inst.mesh;
  mesh.vertices.reserve(pinned.voxels * pinned.vertices_per_voxel);
  for (const auto& c : cells) {
    const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
    const Vec3 center(static_cast<double>(c[0]), static_cast<double>(c[1]), static_cast<double>(c[2]));
    mesh.vertices.push_back(center);
    for (std::size_t k = 1; k < pinned.vertices_per_voxel; ++k) {
      Vec3 p = center + Vec3(jitter(rng), jitter(rng), jitter(rng));
      mesh.vertices.push_back(p.cwiseMax(0.0).cwiseMin(static_cast<double>(last)));
    }
    for (std::uint32_t f = 0; f < pinned.faces_per_voxel; ++f) mesh.faces.push_back({base, base + 1 + f, base + 2 + f});
  }
  auto grid = std::make_shared<const SparseVoxelGrid>(build_grid(mesh, pinned.resolution));
  if (grid->voxel_count() != pinned.voxels) fail_runtime("bench instance did not produce the pinned voxel count");
  auto& s = inst.spectrum;
  s.bins = pinned.bins;
  s.frames = pinned.frames;
  s.fps = kDefaultFps;
  s.grid = grid;
  s.coefficients.resize(pinned.voxels * pinned.bins * 3);
  std::normal_distribution<double> g(0.0, 0.05);
  for (auto& c : s.coefficients) c = {g(rng), g(rng)};
  return inst;
}

struct BenchResult {
  std::vector<FrameTimings> frames;
  nlohmann::json report;
};

/// Steps a session on the instance with every mode excited and reports
/// per-stage median and p95.
inline BenchResult run_bench(const BenchInstance& inst, const BenchSpec& pinned, SessionConfig config = {}) {
  config.resolution = pinned.resolution;
  config.bins = pinned.bins;
  config.per_face = pinned.per_face;
  InteractiveSession session(inst.mesh, inst.spectrum, config);
  session.submit({0, Vec3(1.0, 0.5, -0.25), 1e9});
  session.submit({static_cast<std::uint32_t>(pinned.voxels / 2), Vec3(-0.5, 1.0, 0.5), 1e9});
  for (int i = 0; i < 3; ++i) session.step();  // warm-up
  BenchResult out;
  for (std::size_t i = 0; i < pinned.steps; ++i) out.frames.push_back(session.step()->timings);
  out.report = timing_report(out.frames);
  out.report["instance"] = {{"voxels", session.bank().voxels},
                            {"vertices", inst.mesh.vertex_count()},
                            {"faces", inst.mesh.face_count()},
                            {"splats", session.cloud().size()},
                            {"bins", pinned.bins},
                            {"threads", worker_count()}};
  return out;
}

}  // namespace spectree

#endif  // SPECTREE_BENCH_HPP
