#ifndef SPECTREE_SPECTRUM_HPP
#define SPECTREE_SPECTRUM_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <fftw3.h>

#include "common.hpp"
#include "mesh.hpp"
#include "voxel.hpp"

namespace spectree {

using Complex = std::complex<double>;

constexpr std::size_t kDefaultBins = 16;
constexpr double kDefaultFps = 24.0;

/// Truncated temporal DFT of per-voxel displacement: K complex bins per voxel
/// per axis. Layout: coefficients[(v * bins + k) * 3 + axis].
///
/// Convention: X[k] = sum_t x[t] exp(-2 pi i k t / T) (unnormalized forward).
/// Reconstruction uses 1/T and doubles bins 1..K-1 to stand in for the
/// discarded conjugate half, which is exact while K <= T/2.
struct SparseVoxelSpectrum {
  std::size_t bins = kDefaultBins;
  std::size_t frames = 0;
  double fps = kDefaultFps;
  std::vector<Complex> coefficients;
  std::shared_ptr<const SparseVoxelGrid> grid;

  std::size_t voxel_count() const { return bins == 0 ? 0 : coefficients.size() / (bins * 3); }
  Complex& at(std::size_t v, std::size_t k, int axis) { return coefficients[(v * bins + k) * 3 + axis]; }
  const Complex& at(std::size_t v, std::size_t k, int axis) const { return coefficients[(v * bins + k) * 3 + axis]; }

  void validate() const {
    if (!grid) fail_data("spectrum has no grid");
    if (coefficients.size() != grid->voxel_count() * bins * 3) fail_data("spectrum size does not match its grid");
    if (bins > frames / 2) fail_data("spectrum keeps more bins than T/2");
    for (const auto& c : coefficients)
      if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) fail_data("spectrum has a non-finite coefficient");
  }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Real-to-complex FFT of `series` interleaved series of length T. Sample t of
// series s is in[t * series + s]; bin k of series s lands in out[k * series + s].
inline void batched_rfft(const std::vector<double>& in, std::size_t frames, std::size_t series, std::vector<Complex>& out) {
  const std::size_t half = frames / 2 + 1;
  out.assign(half * series, Complex{});
  if (series == 0) return;
  std::vector<double> scratch(in);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    int n[] = {static_cast<int>(frames)};
    const int s = static_cast<int>(series);
    plan = fftw_plan_many_dft_r2c(1, n, s, scratch.data(), nullptr, s, 1,
                                  reinterpret_cast<fftw_complex*>(out.data()), nullptr, s, 1, FFTW_ESTIMATE);
  }
  if (!plan) fail_runtime("FFT planning failed");
  fftw_execute(plan);
  std::lock_guard lock(fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace detail

/// Temporal FFT of each voxel/axis series, keeping bins [0, K).
inline SparseVoxelSpectrum fft_compress(const VoxelMotion& motion, std::shared_ptr<const SparseVoxelGrid> grid,
                                        std::size_t bins = kDefaultBins, double fps = kDefaultFps) {
  if (motion.frames < 4) fail_data("compression needs at least 4 frames");
  if (bins == 0) fail_usage("K must be at least 1");
  if (bins > motion.frames / 2)
    fail_usage("K=" + std::to_string(bins) + " exceeds T/2=" + std::to_string(motion.frames / 2));
  if (grid && grid->voxel_count() != motion.voxels) fail_data("voxel motion does not match grid");
  if (!(fps > 0.0)) fail_usage("fps must be positive");

  const std::size_t n = motion.voxels;
  const std::size_t series = n * 3;
  std::vector<Complex> full;
  detail::batched_rfft(motion.values, motion.frames, series, full);

  SparseVoxelSpectrum out;
  out.bins = bins;
  out.frames = motion.frames;
  out.fps = fps;
  out.grid = std::move(grid);
  out.coefficients.resize(series * bins);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t k = 0; k < bins; ++k)
      for (int a = 0; a < 3; ++a) out.at(v, k, a) = full[k * series + v * 3 + a];
  return out;
}

inline SparseVoxelSpectrum fft_compress(const VoxelMotion& motion, const SparseVoxelGrid& grid,
                                        std::size_t bins = kDefaultBins, double fps = kDefaultFps) {
  return fft_compress(motion, std::make_shared<const SparseVoxelGrid>(grid), bins, fps);
}

/// Inverse of fft_compress on the voxel level, before devoxelization and
/// without the rest-frame shift.
inline VoxelMotion inverse_spectrum(const SparseVoxelSpectrum& spectrum) {
  const std::size_t n = spectrum.voxel_count();
  const std::size_t frames = spectrum.frames;
  const std::size_t bins = spectrum.bins;
  VoxelMotion out(frames, n);
  // cos/sin tables indexed by (k * t) mod T keep every bin's phase exact.
  std::vector<double> cos_t(frames), sin_t(frames);
  for (std::size_t j = 0; j < frames; ++j) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(frames);
    cos_t[j] = std::cos(phase);
    sin_t[j] = std::sin(phase);
  }
  const double inv_t = 1.0 / static_cast<double>(frames);
  parallel_for(0, n, [&](std::size_t v) {
    for (std::size_t t = 0; t < frames; ++t) {
      for (int a = 0; a < 3; ++a) {
        double acc = spectrum.at(v, 0, a).real();
        for (std::size_t k = 1; k < bins; ++k) {
          const std::size_t j = (k * t) % frames;
          const Complex& x = spectrum.at(v, k, a);
          acc += 2.0 * (x.real() * cos_t[j] - x.imag() * sin_t[j]);
        }
        out.at(t, v, a) = acc * inv_t;
      }
    }
  }, 64);
  return out;
}

/// Spectrum to dense per-vertex motion; the result is shifted so frame 0 is
/// exactly the rest frame.
inline MotionSequence reconstruct_motion(const SparseVoxelSpectrum& spectrum, const SparseVoxelGrid& grid) {
  if (spectrum.voxel_count() != grid.voxel_count())
    fail_data("spectrum has " + std::to_string(spectrum.voxel_count()) + " voxels, grid has " +
              std::to_string(grid.voxel_count()));
  VoxelMotion voxel = inverse_spectrum(spectrum);
  const std::size_t n = voxel.voxels;
  for (std::size_t t = voxel.frames; t-- > 0;)
    for (std::size_t i = 0; i < n * 3; ++i) voxel.values[t * n * 3 + i] -= voxel.values[i];
  return devoxelize_motion(voxel, grid, spectrum.fps);
}

inline MotionSequence reconstruct_motion(const SparseVoxelSpectrum& spectrum) {
  if (!spectrum.grid) fail_data("spectrum has no grid");
  return reconstruct_motion(spectrum, *spectrum.grid);
}

/// Fraction of non-DC spectral energy at bins >= cut, over bins 1..T/2 of
/// every voxel and axis. Static motion yields 0.
inline double hf_energy_ratio(const VoxelMotion& motion, std::size_t cut) {
  if (cut > motion.frames / 2)
    fail_usage("cutoff bin " + std::to_string(cut) + " exceeds T/2=" + std::to_string(motion.frames / 2));
  if (motion.frames < 2 || motion.voxels == 0) return 0.0;
  const std::size_t series = motion.voxels * 3;
  std::vector<Complex> full;
  detail::batched_rfft(motion.values, motion.frames, series, full);
  double high = 0.0, total = 0.0;
  for (std::size_t k = 1; k <= motion.frames / 2; ++k) {
    double bin_energy = 0.0;
    for (std::size_t s = 0; s < series; ++s) bin_energy += std::norm(full[k * series + s]);
    total += bin_energy;
    if (k >= cut) high += bin_energy;
  }
  return total > 0.0 ? high / total : 0.0;
}

/// Per voxel/axis energy carried by the retained bins, (1/T)(|X0|^2 + 2 sum |Xk|^2).
/// Layout: [v * 3 + axis].
inline std::vector<double> retained_energy(const SparseVoxelSpectrum& spectrum) {
  const std::size_t n = spectrum.voxel_count();
  std::vector<double> out(n * 3, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (int a = 0; a < 3; ++a) {
      double e = std::norm(spectrum.at(v, 0, a));
      for (std::size_t k = 1; k < spectrum.bins; ++k) e += 2.0 * std::norm(spectrum.at(v, k, a));
      out[v * 3 + a] = e / static_cast<double>(spectrum.frames);
    }
  return out;
}

/// Per voxel/axis time-domain energy sum_t x[t]^2. Layout: [v * 3 + axis].
inline std::vector<double> temporal_energy(const VoxelMotion& motion) {
  std::vector<double> out(motion.voxels * 3, 0.0);
  for (std::size_t t = 0; t < motion.frames; ++t)
    for (std::size_t s = 0; s < motion.voxels * 3; ++s) {
      const double x = motion.values[t * motion.voxels * 3 + s];
      out[s] += x * x;
    }
  return out;
}

// ---------------------------------------------------------------------------
// SVSP / MOTN binary files (little-endian).

constexpr std::uint32_t kSvspVersion = 1;

inline void write_spectrum(const SparseVoxelSpectrum& spectrum, const std::filesystem::path& path) {
  spectrum.validate();
  const SparseVoxelGrid& grid = *spectrum.grid;
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write " + path.string());
  out.write("SVSP", 4);
  le::put<std::uint32_t>(out, kSvspVersion);
  le::put<std::uint32_t>(out, grid.resolution);
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.voxel_count()));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(spectrum.bins));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(spectrum.frames));
  le::put<float>(out, static_cast<float>(spectrum.fps));
  for (const auto& c : grid.occupied)
    for (auto x : c) le::put<std::uint16_t>(out, x);
  for (auto v : grid.vertex_to_voxel) le::put<std::uint32_t>(out, v);
  for (std::size_t v = 0; v < grid.voxel_count(); ++v)
    for (std::size_t k = 0; k < spectrum.bins; ++k) {
      for (int a = 0; a < 3; ++a) le::put<float>(out, static_cast<float>(spectrum.at(v, k, a).real()));
      for (int a = 0; a < 3; ++a) le::put<float>(out, static_cast<float>(spectrum.at(v, k, a).imag()));
    }
  if (!out) fail_runtime("failed writing " + path.string());
}

/// Reads an SVSP file. The returned grid carries the partition (occupied
/// cells and vertex map) but not the world placement; use attach_mesh to
/// recover it from the rest mesh.
inline SparseVoxelSpectrum read_spectrum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open " + path.string());
  const auto file_size = std::filesystem::file_size(path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "SVSP") fail_data(path.string() + " is not an SVSP file");
  const auto version = le::get<std::uint32_t>(in);
  if (version != kSvspVersion) fail_data("unsupported SVSP version " + std::to_string(version));
  auto grid = std::make_shared<SparseVoxelGrid>();
  grid->resolution = le::get<std::uint32_t>(in);
  const auto n = le::get<std::uint32_t>(in);
  SparseVoxelSpectrum s;
  s.bins = le::get<std::uint32_t>(in);
  s.frames = le::get<std::uint32_t>(in);
  s.fps = le::get<float>(in);
  if (s.bins == 0 || s.bins > s.frames / 2) fail_data("SVSP header has invalid K/T");

  // The vertex count is implied by the remaining payload size.
  const std::uint64_t header = 4 + 4 * 5 + 4;
  const std::uint64_t fixed = header + std::uint64_t{n} * 6 + std::uint64_t{n} * s.bins * 24;
  if (file_size < fixed || (file_size - fixed) % 4 != 0) fail_data("SVSP payload size is inconsistent");
  const std::uint64_t vertex_count = (file_size - fixed) / 4;

  grid->occupied.resize(n);
  for (auto& c : grid->occupied)
    for (auto& x : c) x = le::get<std::uint16_t>(in);
  grid->vertex_to_voxel.resize(vertex_count);
  for (auto& v : grid->vertex_to_voxel) v = le::get<std::uint32_t>(in);
  grid->rebuild_members();
  s.coefficients.resize(std::size_t{n} * s.bins * 3);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t k = 0; k < s.bins; ++k) {
      float re[3], im[3];
      for (auto& x : re) x = le::get<float>(in);
      for (auto& x : im) x = le::get<float>(in);
      for (int a = 0; a < 3; ++a) s.at(v, k, a) = Complex(re[a], im[a]);
    }
  s.grid = std::move(grid);
  s.validate();
  return s;
}

/// Rebuilds the spectrum's grid from the rest mesh and checks that it
/// reproduces the stored partition.
inline void attach_mesh(SparseVoxelSpectrum& spectrum, const TriMesh& mesh) {
  if (!spectrum.grid) fail_data("spectrum has no grid");
  auto rebuilt = std::make_shared<SparseVoxelGrid>(build_grid(mesh, spectrum.grid->resolution));
  if (!rebuilt->same_partition(*spectrum.grid))
    fail_data("spectrum grid does not match the mesh (vertex count or voxel partition differs)");
  spectrum.grid = std::move(rebuilt);
}

inline void write_motion(const MotionSequence& motion, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write " + path.string());
  out.write("MOTN", 4);
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(motion.vertices));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(motion.frames));
  le::put<float>(out, static_cast<float>(motion.fps));
  for (double v : motion.values) le::put<float>(out, static_cast<float>(v));
  if (!out) fail_runtime("failed writing " + path.string());
}

inline MotionSequence read_motion(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "MOTN") fail_data(path.string() + " is not a MOTN file");
  const auto vertices = le::get<std::uint32_t>(in);
  const auto frames = le::get<std::uint32_t>(in);
  const auto fps = le::get<float>(in);
  MotionSequence m(frames, vertices, fps);
  for (auto& v : m.values) v = le::get<float>(in);
  m.validate();
  return m;
}

}  // namespace spectree

#endif  // SPECTREE_SPECTRUM_HPP
