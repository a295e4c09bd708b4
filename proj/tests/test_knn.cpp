#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include <spectree/knn.hpp>

using namespace spectree;

namespace {

std::vector<Neighbor> brute_force(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k) {
  std::vector<std::pair<double, std::uint32_t>> all;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 d = pts[i] - q;
    all.push_back({d.x() * d.x() + d.y() * d.y() + d.z() * d.z(), static_cast<std::uint32_t>(i)});
  }
  std::sort(all.begin(), all.end());
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({all[i].second, std::sqrt(all[i].first)});
  return out;
}

}  // namespace

TEST(Knn, CollinearOrdering) {
  std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  auto r = knn(pts, Vec3(0, 0, 0), 2);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].index, 0u);
  EXPECT_EQ(r[1].index, 1u);
  EXPECT_DOUBLE_EQ(r[1].distance, 1.0);
}

TEST(Knn, TieBreaksByIndex) {
  std::vector<Vec3> pts(10, Vec3(50, 50, 50));
  pts[3] = Vec3(-1, 0, 0);
  pts[7] = Vec3(1, 0, 0);
  auto r = knn(pts, Vec3(0, 0, 0), 1);
  EXPECT_EQ(r[0].index, 3u);
}

TEST(Knn, Errors) {
  std::vector<Vec3> pts{{0, 0, 0}};
  EXPECT_THROW(knn(pts, Vec3::Zero(), 0), Error);
  EXPECT_THROW(knn(pts, Vec3::Zero(), 2), Error);
  EXPECT_THROW(knn({}, Vec3::Zero(), 1), Error);
}

TEST(Knn, MatchesBruteForce) {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts(1000);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  PointGrid grid(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto got = grid.query(pts[i], 5);
    auto want = brute_force(pts, pts[i], 5);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t j = 0; j < got.size(); ++j) {
      EXPECT_EQ(got[j].index, want[j].index);
      EXPECT_EQ(got[j].distance, want[j].distance);
    }
  }
  // Queries outside the point cloud and with large k.
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 q(3 * u(rng), 3 * u(rng), 3 * u(rng));
    auto got = grid.query(q, 40);
    auto want = brute_force(pts, q, 40);
    for (std::size_t j = 0; j < got.size(); ++j) EXPECT_EQ(got[j].index, want[j].index);
  }
}

TEST(Knn, DegenerateLayouts) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  // Points on a plane and with many duplicates.
  std::vector<Vec3> pts;
  for (int i = 0; i < 400; ++i) pts.emplace_back(u(rng), u(rng), 0.0);
  for (int i = 0; i < 50; ++i) pts.push_back(pts[static_cast<std::size_t>(i)]);
  PointGrid grid(pts);
  for (int trial = 0; trial < 100; ++trial) {
    Vec3 q(u(rng), u(rng), u(rng) - 5.0);
    auto got = grid.query(q, 7);
    auto want = brute_force(pts, q, 7);
    for (std::size_t j = 0; j < got.size(); ++j) EXPECT_EQ(got[j].index, want[j].index);
  }
}
