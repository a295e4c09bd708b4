#ifndef SPECTREE_MODAL_HPP
#define SPECTREE_MODAL_HPP

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "common.hpp"
#include "spectrum.hpp"

namespace spectree {

enum class Integrator { semi_implicit, explicit_euler };

/// Point load on one voxel, active for t0 <= t < t0 + duration.
struct ForceEvent {
  std::uint32_t voxel = 0;
  Vec3 force = Vec3::Zero();
  double start = 0.0;
  double duration = 0.0;

  bool active(double t) const { return t >= start && t < start + duration; }
  void validate() const {
    if (!(duration > 0.0)) fail_usage("force duration must be positive");
    if (!force.allFinite() || !std::isfinite(start)) fail_usage("force must be finite");
  }
};

/// Decoupled oscillators, one per non-DC spectrum bin. Entry i describes bin
/// i + 1. Shapes are split into real and imaginary planes, mode-major.
struct ModalBank {
  std::size_t voxels = 0;
  std::size_t bins = 0;
  std::size_t frames = 0;
  double fps = 0.0;
  double damping_ratio = 0.05;
  std::vector<double> omega, mass, stiffness, damping;
  std::vector<double> shape_re, shape_im;  // [mode][voxel * 3 + axis]

  std::size_t modes() const { return omega.size(); }
  Complex shape(std::size_t mode, std::size_t voxel, int axis) const {
    const std::size_t i = mode * voxels * 3 + voxel * 3 + static_cast<std::size_t>(axis);
    return {shape_re[i], shape_im[i]};
  }
  double max_omega() const { return omega.empty() ? 0.0 : omega.back(); }
};

struct ModalState {
  std::vector<Complex> q, qdot;
  double time = 0.0;

  ModalState() = default;
  explicit ModalState(std::size_t modes) : q(modes), qdot(modes) {}
  std::size_t modes() const { return q.size(); }
};

inline ModalBank build_bank(const SparseVoxelSpectrum& spectrum, double damping_ratio = 0.05, double mass = 1.0) {
  spectrum.validate();
  if (spectrum.bins < 2) fail_usage("modal bank needs K >= 2 (no dynamic modes)");
  if (!(damping_ratio > 0.0 && damping_ratio < 1.0)) fail_usage("damping ratio must lie in (0, 1)");
  if (!(mass > 0.0)) fail_usage("modal mass must be positive");
  ModalBank bank;
  bank.voxels = spectrum.voxel_count();
  bank.bins = spectrum.bins;
  bank.frames = spectrum.frames;
  bank.fps = spectrum.fps;
  bank.damping_ratio = damping_ratio;
  const std::size_t modes = spectrum.bins - 1;
  const std::size_t plane = bank.voxels * 3;
  bank.shape_re.resize(modes * plane);
  bank.shape_im.resize(modes * plane);
  for (std::size_t m = 0; m < modes; ++m) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(m + 1) * spectrum.fps / static_cast<double>(spectrum.frames);
    bank.omega.push_back(w);
    bank.mass.push_back(mass);
    bank.stiffness.push_back(mass * w * w);
    bank.damping.push_back(2.0 * damping_ratio * mass * w);
    for (std::size_t v = 0; v < bank.voxels; ++v)
      for (int a = 0; a < 3; ++a) {
        const Complex c = spectrum.at(v, m + 1, a);
        bank.shape_re[m * plane + v * 3 + a] = c.real();
        bank.shape_im[m * plane + v * 3 + a] = c.imag();
      }
  }
  return bank;
}

/// f_k = sum over active events of conj(phi_k[target]) . force
inline std::vector<Complex> project_force(const ModalBank& bank, std::span<const ForceEvent> events, double t) {
  std::vector<Complex> f(bank.modes(), Complex{});
  for (const auto& e : events) {
    if (e.voxel >= bank.voxels) fail_usage("force target voxel " + std::to_string(e.voxel) + " out of range");
    if (!e.active(t)) continue;
    for (std::size_t m = 0; m < bank.modes(); ++m)
      for (int a = 0; a < 3; ++a) f[m] += std::conj(bank.shape(m, e.voxel, a)) * e.force[a];
  }
  return f;
}

inline void check_step(const ModalBank& bank, double dt) {
  if (!(dt > 0.0)) fail_usage("time step must be positive");
  if (!(dt * bank.max_omega() < 2.0))
    fail_usage("time step " + std::to_string(dt) + " unstable for highest mode (dt * omega = " +
               std::to_string(dt * bank.max_omega()) + ", must be < 2)");
}

inline void step(const ModalBank& bank, ModalState& state, std::span<const Complex> forces, double dt,
                 Integrator integrator = Integrator::semi_implicit) {
  if (state.modes() != bank.modes()) fail_usage("modal state does not match bank");
  if (!forces.empty() && forces.size() != bank.modes()) fail_usage("modal force count does not match bank");
  check_step(bank, dt);
  for (std::size_t m = 0; m < bank.modes(); ++m) {
    const Complex f = forces.empty() ? Complex{} : forces[m];
    const Complex acc = (f - bank.damping[m] * state.qdot[m] - bank.stiffness[m] * state.q[m]) / bank.mass[m];
    if (integrator == Integrator::semi_implicit) {
      state.qdot[m] += dt * acc;
      state.q[m] += dt * state.qdot[m];
    } else {
      state.q[m] += dt * state.qdot[m];
      state.qdot[m] += dt * acc;
    }
  }
  state.time += dt;
}

inline double modal_energy(const ModalBank& bank, const ModalState& state) {
  double e = 0.0;
  for (std::size_t m = 0; m < bank.modes(); ++m)
    e += 0.5 * bank.mass[m] * std::norm(state.qdot[m]) + 0.5 * bank.stiffness[m] * std::norm(state.q[m]);
  return e;
}

/// D = Re(sum_k phi_k q_k), written as n x 3 into out.
inline void superpose(const ModalBank& bank, const ModalState& state, std::span<double> out) {
  if (state.modes() != bank.modes()) fail_usage("modal state does not match bank");
  const std::size_t plane = bank.voxels * 3;
  if (out.size() != plane) fail_usage("superpose output has wrong size");
  // Blocks of entries run in parallel; each block accumulates every mode.
  constexpr std::size_t block = 8192;
  parallel_for(0, (plane + block - 1) / block, [&](std::size_t b) {
    const std::size_t lo = b * block, hi = std::min(plane, lo + block);
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(lo), out.begin() + static_cast<std::ptrdiff_t>(hi), 0.0);
    for (std::size_t m = 0; m < bank.modes(); ++m) {
      const double qr = state.q[m].real(), qi = state.q[m].imag();
      if (qr == 0.0 && qi == 0.0) continue;
      const double* re = bank.shape_re.data() + m * plane;
      const double* im = bank.shape_im.data() + m * plane;
      for (std::size_t i = lo; i < hi; ++i) out[i] += re[i] * qr - im[i] * qi;
    }
  }, 2);
}

inline std::vector<double> superpose(const ModalBank& bank, const ModalState& state) {
  std::vector<double> out(bank.voxels * 3);
  superpose(bank, state, out);
  return out;
}

}  // namespace spectree

#endif  // SPECTREE_MODAL_HPP
