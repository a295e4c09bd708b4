#include <random>

#include <gtest/gtest.h>

#include <spectree/lss.hpp>

#include "test_support.hpp"

using namespace spectree;
namespace st = spectree::testing;

namespace {

SparseVoxelSpectrum blank_spectrum(std::size_t voxels, std::size_t bins, std::size_t frames = 100) {
  auto g = std::make_shared<SparseVoxelGrid>();
  for (std::size_t v = 0; v < voxels; ++v) {
    g->occupied.push_back({static_cast<std::uint16_t>(v), 0, 0});
    g->vertex_to_voxel.push_back(static_cast<std::uint32_t>(v));
  }
  g->rebuild_members();
  SparseVoxelSpectrum s;
  s.bins = bins;
  s.frames = frames;
  s.grid = g;
  s.coefficients.assign(voxels * bins * 3, Complex{});
  return s;
}

SparseVoxelSpectrum random_spectrum(std::mt19937_64& rng, std::size_t voxels, std::size_t bins) {
  std::normal_distribution<double> g;
  auto s = blank_spectrum(voxels, bins);
  for (auto& c : s.coefficients) c = Complex(g(rng), g(rng));
  return s;
}

std::vector<Vec3> random_positions(std::mt19937_64& rng, std::size_t count) {
  std::uniform_real_distribution<double> u(0.0, 4.0);
  std::vector<Vec3> p(count);
  for (auto& x : p) x = Vec3(u(rng), u(rng), u(rng));
  return p;
}

double re_gap(const SparseVoxelSpectrum& s) {
  double acc = 0;
  for (std::size_t c = 0; c < s.bins * 3; ++c) acc += std::norm(s.coefficients[c].real() - s.coefficients[s.bins * 3 + c].real());
  return std::sqrt(acc);
}

}  // namespace

TEST(LssMetric, ConstantSpectrumIsZero) {
  std::mt19937_64 rng(1);
  auto s = blank_spectrum(30, 4);
  for (std::size_t v = 0; v < 30; ++v)
    for (std::size_t k = 0; k < 4; ++k)
      for (int a = 0; a < 3; ++a) s.at(v, k, a) = Complex(0.1 * k + a, -0.3 * a);
  EXPECT_EQ(lss_metric(s, random_positions(rng, 30)), 0.0);
}

TEST(LssMetric, TwoVoxelHandValue) {
  auto s = blank_spectrum(2, 2);
  s.at(0, 1, 0) = Complex(0.6, 0.25);
  s.at(1, 1, 0) = Complex(0.0, 0.25);
  s.at(0, 0, 2) = Complex(0.8, 0.0);
  // Re differs by (0.6, 0.8) -> norm 1, Im equal, d = 2, kappa = 1.
  LssConfig cfg{1, 0.5, 0.5};
  const double value = lss_metric(s, {Vec3(0, 0, 0), Vec3(0, 2, 0)}, cfg);
  EXPECT_NEAR(value, std::exp(-1.0), 1e-12);
}

TEST(LssMetric, ImaginaryWeightAndErrors) {
  auto s = blank_spectrum(2, 1);
  s.at(0, 0, 1) = Complex(0.0, 2.0);
  LssConfig cfg{1, 0.0, 0.25};
  EXPECT_NEAR(lss_metric(s, {Vec3(0, 0, 0), Vec3(1, 0, 0)}, cfg), 0.5, 1e-12);
  cfg.neighbors = 2;
  EXPECT_THROW(lss_metric(s, {Vec3(0, 0, 0), Vec3(1, 0, 0)}, cfg), Error);
  EXPECT_THROW(lss_metric(s, {Vec3(0, 0, 0)}, LssConfig{1, 0.5, 0.5}), Error);
}

TEST(LssMetric, NonNegativeAndTranslationInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto s = random_spectrum(rng, 40, 3);
    auto pos = random_positions(rng, 40);
    const double base = lss_metric(s, pos);
    EXPECT_GT(base, 0.0);
    for (auto& p : pos) p += Vec3(3.0, -1.0, 0.5);
    EXPECT_NEAR(lss_metric(s, pos), base, 1e-9 * base);
  }
}

TEST(LssMetric, PerBinBreakdownBoundsJointValue) {
  std::mt19937_64 rng(8);
  auto s = random_spectrum(rng, 25, 4);
  auto pos = random_positions(rng, 25);
  auto bins = lss_metric_per_bin(s, pos);
  ASSERT_EQ(bins.size(), 4u);
  double sum = 0;
  for (double b : bins) sum += b;
  // Joint norms never exceed the sum of per-bin norms.
  EXPECT_LE(lss_metric(s, pos), sum + 1e-12);
}

TEST(SmoothSpectrum, ConstantUnchanged) {
  std::mt19937_64 rng(4);
  auto s = blank_spectrum(10, 2);
  for (auto& c : s.coefficients) c = Complex(1.0, -2.0);
  auto out = smooth_spectrum(s, random_positions(rng, 10), {}, 5, 0.1);
  EXPECT_EQ(out.coefficients, s.coefficients);
}

TEST(SmoothSpectrum, TwoVoxelsConverge) {
  auto s = blank_spectrum(2, 2);
  s.at(0, 1, 0) = Complex(0.6, 0.0);
  s.at(0, 0, 2) = Complex(0.8, 0.0);
  LssConfig cfg{1, 0.5, 0.5};
  std::vector<Vec3> pos{Vec3(0, 0, 0), Vec3(0, 2, 0)};
  const double before = re_gap(s);
  auto out = smooth_spectrum(s, pos, cfg, 200, 1.0);
  EXPECT_NEAR(before, 1.0, 1e-12);
  EXPECT_LT(re_gap(out), 1e-6);
  EXPECT_LT(lss_metric(out, pos, cfg), 1e-6);
}

TEST(SmoothSpectrum, DescentOnRandomSpectra) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    auto s = random_spectrum(rng, 60, 4);
    auto pos = random_positions(rng, 60);
    const double start = lss_metric(s, pos);
    auto one = smooth_spectrum(s, pos, {}, 1, 0.5);
    EXPECT_LT(lss_metric(one, pos), start);
    double prev = start;
    auto cur = s;
    for (int step = 0; step < 10; ++step) {
      cur = smooth_spectrum(cur, pos, {}, 1, 0.5);
      const double now = lss_metric(cur, pos);
      EXPECT_LE(now, prev);
      prev = now;
    }
  }
  EXPECT_THROW(smooth_spectrum(blank_spectrum(3, 1), random_positions(rng, 3), {1, 0.5, 0.5}, 0, 0.1), Error);
}
