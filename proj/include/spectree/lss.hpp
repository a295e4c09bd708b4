#ifndef SPECTREE_LSS_HPP
#define SPECTREE_LSS_HPP

#include <cmath>
#include <vector>

#include "common.hpp"
#include "knn.hpp"
#include "spectrum.hpp"

namespace spectree {

/// Local spectrum smoothness weights.
struct LssConfig {
  std::size_t neighbors = 5;   // kappa
  double decay = 0.5;          // alpha, 1/model-unit
  double imag_weight = 0.5;    // lambda

  void validate() const {
    if (neighbors < 1) fail_usage("LSS neighbor count must be >= 1");
    if (!(decay >= 0.0)) fail_usage("LSS decay must be >= 0");
    if (!(imag_weight >= 0.0)) fail_usage("LSS imaginary weight must be >= 0");
  }
};

/// Directed neighbor pairs (i -> j for j in kNN(i)) with weights exp(-alpha d_ij).
struct LssNeighborhood {
  struct Edge {
    std::uint32_t from;
    std::uint32_t to;
    double weight;
  };
  std::size_t sites = 0;
  std::vector<Edge> edges;

  LssNeighborhood(const std::vector<Vec3>& positions, const LssConfig& cfg) : sites(positions.size()) {
    cfg.validate();
    if (cfg.neighbors >= positions.size())
      fail_usage("LSS needs more sites (" + std::to_string(positions.size()) + ") than neighbors (" +
                 std::to_string(cfg.neighbors) + ")");
    PointGrid index(positions);
    edges.reserve(positions.size() * cfg.neighbors);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      // One extra result so the site itself can be skipped wherever it sorts.
      auto found = index.query(positions[i], cfg.neighbors + 1);
      std::size_t taken = 0;
      for (const auto& nb : found) {
        if (nb.index == i || taken == cfg.neighbors) continue;
        edges.push_back({static_cast<std::uint32_t>(i), nb.index, std::exp(-cfg.decay * nb.distance)});
        ++taken;
      }
    }
  }
};

namespace detail {

// Euclidean norms of the real and imaginary differences between two sites,
// over bins [k_begin, k_end) and all axes.
inline std::pair<double, double> site_difference(const SparseVoxelSpectrum& s, std::size_t i, std::size_t j,
                                                 std::size_t k_begin, std::size_t k_end) {
  double re = 0.0, im = 0.0;
  const Complex* a = &s.coefficients[i * s.bins * 3];
  const Complex* b = &s.coefficients[j * s.bins * 3];
  for (std::size_t c = k_begin * 3; c < k_end * 3; ++c) {
    const Complex d = a[c] - b[c];
    re += d.real() * d.real();
    im += d.imag() * d.imag();
  }
  return {std::sqrt(re), std::sqrt(im)};
}

}  // namespace detail

inline double lss_metric(const SparseVoxelSpectrum& spectrum, const LssNeighborhood& hood, const LssConfig& cfg) {
  if (hood.sites != spectrum.voxel_count()) fail_data("LSS neighborhood does not match the spectrum");
  double total = 0.0;
  for (const auto& e : hood.edges) {
    auto [re, im] = detail::site_difference(spectrum, e.from, e.to, 0, spectrum.bins);
    total += e.weight * (re + cfg.imag_weight * im);
  }
  return total / static_cast<double>(hood.sites);
}

/// Mean over sites of the distance-weighted real/imaginary spectrum
/// discrepancy to each site's kappa nearest neighbors.
inline double lss_metric(const SparseVoxelSpectrum& spectrum, const std::vector<Vec3>& positions,
                         const LssConfig& cfg = {}) {
  if (positions.size() != spectrum.voxel_count()) fail_data("LSS positions do not match the spectrum");
  return lss_metric(spectrum, LssNeighborhood(positions, cfg), cfg);
}

/// Same metric evaluated separately on each frequency bin (diagnostics only).
inline std::vector<double> lss_metric_per_bin(const SparseVoxelSpectrum& spectrum, const std::vector<Vec3>& positions,
                                              const LssConfig& cfg = {}) {
  if (positions.size() != spectrum.voxel_count()) fail_data("LSS positions do not match the spectrum");
  LssNeighborhood hood(positions, cfg);
  std::vector<double> out(spectrum.bins, 0.0);
  for (const auto& e : hood.edges)
    for (std::size_t k = 0; k < spectrum.bins; ++k) {
      auto [re, im] = detail::site_difference(spectrum, e.from, e.to, k, k + 1);
      out[k] += e.weight * (re + cfg.imag_weight * im);
    }
  for (auto& v : out) v /= static_cast<double>(hood.sites);
  return out;
}

/// Gradient of lss_metric; the real part of each entry is the derivative with
/// respect to the coefficient's real part, likewise for imaginary. Pairs with
/// zero difference contribute the zero subgradient.
inline std::vector<Complex> lss_gradient(const SparseVoxelSpectrum& spectrum, const LssNeighborhood& hood,
                                         const LssConfig& cfg) {
  const std::size_t stride = spectrum.bins * 3;
  std::vector<Complex> grad(spectrum.coefficients.size(), Complex{});
  const double inv_n = 1.0 / static_cast<double>(hood.sites);
  for (const auto& e : hood.edges) {
    auto [re, im] = detail::site_difference(spectrum, e.from, e.to, 0, spectrum.bins);
    const double gr = re > 0.0 ? e.weight * inv_n / re : 0.0;
    const double gi = im > 0.0 ? e.weight * cfg.imag_weight * inv_n / im : 0.0;
    const Complex* a = &spectrum.coefficients[e.from * stride];
    const Complex* b = &spectrum.coefficients[e.to * stride];
    Complex* ga = &grad[e.from * stride];
    Complex* gb = &grad[e.to * stride];
    for (std::size_t c = 0; c < stride; ++c) {
      const Complex d = a[c] - b[c];
      const Complex g(gr * d.real(), gi * d.imag());
      ga[c] += g;
      gb[c] -= g;
    }
  }
  return grad;
}

/// Gradient descent on lss_metric. A step that would raise the metric is
/// halved until it does not (or left out entirely), so the metric never
/// increases from one step to the next.
inline SparseVoxelSpectrum smooth_spectrum(const SparseVoxelSpectrum& spectrum, const std::vector<Vec3>& positions,
                                           const LssConfig& cfg, std::size_t steps, double step_size) {
  if (steps < 1) fail_usage("smoothing needs at least one step");
  if (!(step_size > 0.0)) fail_usage("smoothing step size must be positive");
  if (positions.size() != spectrum.voxel_count()) fail_data("LSS positions do not match the spectrum");
  LssNeighborhood hood(positions, cfg);
  SparseVoxelSpectrum current = spectrum;
  double value = lss_metric(current, hood, cfg);
  SparseVoxelSpectrum trial = current;
  for (std::size_t step = 0; step < steps; ++step) {
    const auto grad = lss_gradient(current, hood, cfg);
    for (const auto& g : grad)
      if (!std::isfinite(g.real()) || !std::isfinite(g.imag())) fail_runtime("non-finite LSS gradient");
    double h = step_size;
    for (int halvings = 0; halvings < 60; ++halvings, h *= 0.5) {
      for (std::size_t c = 0; c < grad.size(); ++c) trial.coefficients[c] = current.coefficients[c] - h * grad[c];
      const double candidate = lss_metric(trial, hood, cfg);
      if (candidate <= value) {
        std::swap(current.coefficients, trial.coefficients);
        value = candidate;
        break;
      }
    }
  }
  return current;
}

}  // namespace spectree

#endif  // SPECTREE_LSS_HPP
