#ifndef SPECTREE_KNN_HPP
#define SPECTREE_KNN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "common.hpp"
#include "mesh.hpp"

namespace spectree {

struct Neighbor {
  std::uint32_t index = 0;
  double distance = 0.0;
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Uniform hash-grid over a fixed point set for exact k-nearest-neighbor queries.
/// Results are ordered by ascending distance, ties by ascending index.
class PointGrid {
public:
  explicit PointGrid(std::vector<Vec3> points, double points_per_cell = 2.0) : points_(std::move(points)) {
    if (points_.empty()) fail_usage("knn over an empty point set");
    Aabb box = bounding_box(points_);
    origin_ = box.min;
    const Vec3 ext = box.extent();
    const double volume = std::max(ext.x(), 1e-12) * std::max(ext.y(), 1e-12) * std::max(ext.z(), 1e-12);
    const double longest = ext.maxCoeff();
    cell_ = std::cbrt(volume * points_per_cell / static_cast<double>(points_.size()));
    if (!(cell_ > 0.0) || !std::isfinite(cell_)) cell_ = 1.0;
    cell_ = std::max(cell_, longest / 256.0);
    if (cell_ <= 0.0) cell_ = 1.0;
    // Flat or thin point sets would otherwise allocate far more cells than points.
    const auto cell_budget = static_cast<std::int64_t>(8 * points_.size() + 64);
    for (;;) {
      for (int a = 0; a < 3; ++a) dims_[a] = std::max<std::int64_t>(1, static_cast<std::int64_t>(ext[a] / cell_) + 1);
      if (dims_[0] * dims_[1] * dims_[2] <= cell_budget) break;
      cell_ *= 1.25;
    }
    std::vector<std::uint32_t> counts(cell_count() + 1, 0);
    cell_of_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      auto c = cell_coord(points_[i]);
      cell_of_[i] = flat(c[0], c[1], c[2]);
      ++counts[cell_of_[i] + 1];
    }
    for (std::size_t c = 1; c < counts.size(); ++c) counts[c] += counts[c - 1];
    starts_ = counts;
    order_.resize(points_.size());
    std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
    for (std::size_t i = 0; i < points_.size(); ++i) order_[cursor[cell_of_[i]]++] = static_cast<std::uint32_t>(i);
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  std::vector<Neighbor> query(const Vec3& q, std::size_t k) const {
    if (k == 0) fail_usage("knn requires k >= 1");
    if (k > points_.size()) fail_usage("knn k exceeds the number of points");

    // Candidates as (squared distance, index); grows ring by ring.
    std::vector<std::pair<double, std::uint32_t>> best;
    best.reserve(k + 1);
    auto consider = [&](std::uint32_t idx) {
      const double d2 = squared_distance(points_[idx], q);
      std::pair<double, std::uint32_t> cand{d2, idx};
      if (best.size() == k && !(cand < best.back())) return;
      auto pos = std::upper_bound(best.begin(), best.end(), cand);
      best.insert(pos, cand);
      if (best.size() > k) best.pop_back();
    };

    std::array<std::int64_t, 3> center{};
    for (int a = 0; a < 3; ++a) center[a] = static_cast<std::int64_t>(std::floor((q[a] - origin_[a]) / cell_));

    std::int64_t first_ring = 0;
    for (int a = 0; a < 3; ++a)
      first_ring = std::max({first_ring, -center[a], center[a] - (dims_[a] - 1)});

    for (std::int64_t r = first_ring;; ++r) {
      std::array<std::int64_t, 3> lo{}, hi{};
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::max<std::int64_t>(0, center[a] - r);
        hi[a] = std::min<std::int64_t>(dims_[a] - 1, center[a] + r);
      }
      for (std::int64_t x = lo[0]; x <= hi[0]; ++x)
        for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
          for (std::int64_t z = lo[2]; z <= hi[2]; ++z) {
            const bool on_shell = std::max({std::abs(x - center[0]), std::abs(y - center[1]), std::abs(z - center[2])}) == r;
            if (!on_shell) continue;
            const std::size_t c = flat(x, y, z);
            for (std::uint32_t s = starts_[c]; s < starts_[c + 1]; ++s) consider(order_[s]);
          }

      bool covers_all = true;
      for (int a = 0; a < 3; ++a)
        if (center[a] - r > 0 || center[a] + r < dims_[a] - 1) covers_all = false;
      if (covers_all) break;
      if (best.size() == k) {
        // Anything outside the searched box is at least this far away.
        double bound = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
          const double box_lo = origin_[a] + static_cast<double>(center[a] - r) * cell_;
          const double box_hi = origin_[a] + static_cast<double>(center[a] + r + 1) * cell_;
          if (center[a] - r > 0) bound = std::min(bound, q[a] - box_lo);
          if (center[a] + r < dims_[a] - 1) bound = std::min(bound, box_hi - q[a]);
        }
        if (bound > 0.0 && best.back().first < bound * bound) break;
      }
    }

    std::vector<Neighbor> out;
    out.reserve(best.size());
    for (const auto& [d2, idx] : best) out.push_back({idx, std::sqrt(d2)});
    return out;
  }

private:
  std::size_t cell_count() const { return static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]); }
  std::size_t flat(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return static_cast<std::size_t>((x * dims_[1] + y) * dims_[2] + z);
  }
  std::array<std::int64_t, 3> cell_coord(const Vec3& p) const {
    std::array<std::int64_t, 3> c{};
    for (int a = 0; a < 3; ++a)
      c[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor((p[a] - origin_[a]) / cell_)), 0, dims_[a] - 1);
    return c;
  }

  std::vector<Vec3> points_;
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 1.0;
  std::array<std::int64_t, 3> dims_{1, 1, 1};
  std::vector<std::size_t> cell_of_;
  std::vector<std::uint32_t> starts_;
  std::vector<std::uint32_t> order_;
};

/// One-shot convenience wrapper; build a PointGrid directly for repeated queries.
inline std::vector<Neighbor> knn(const std::vector<Vec3>& points, const Vec3& query, std::size_t k) {
  if (points.empty()) fail_usage("knn over an empty point set");
  return PointGrid(points).query(query, k);
}

}  // namespace spectree

#endif  // SPECTREE_KNN_HPP
