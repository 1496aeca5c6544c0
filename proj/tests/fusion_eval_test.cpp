#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_support.hpp"
#include "uamvs/fusion_eval.hpp"
#include "uamvs/synth.hpp"

namespace uamvs {
namespace {

PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent) {
  std::uniform_real_distribution<double> u(-extent, extent);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
  return c;
}

PointCloud grid_cloud(int n, double spacing, const Eigen::Vector3d& offset) {
  PointCloud c;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) c.points.push_back(offset + spacing * Eigen::Vector3d(x, y, z));
  return c;
}

TEST(KdTree, MatchesBruteForceIncludingTies) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    PointCloud cloud = random_cloud(rng, 2000, 5.0);
    // Integer lattice points produce exact distance ties.
    for (const auto& p : grid_cloud(6, 1.0, {-3, -3, -3}).points) cloud.points.push_back(p);
    cloud.points.push_back(cloud.points[5]);  // duplicate
    const KdTree tree(cloud.points);
    std::uniform_real_distribution<double> u(-7.0, 7.0);
    std::uniform_int_distribution<int> iu(-4, 4);
    for (int q = 0; q < 2000; ++q) {
      const Eigen::Vector3d query = q % 2 ? Eigen::Vector3d(u(rng), u(rng), u(rng))
                                          : Eigen::Vector3d(iu(rng) + 0.5, iu(rng) + 0.5, iu(rng));
      const auto hit = tree.nearest(query);
      const auto want = testing::brute_nearest(cloud.points, query);
      EXPECT_EQ(hit.index, want.index);
      EXPECT_EQ(hit.distance, want.distance);
    }
  }
  EXPECT_THROW(KdTree({}).nearest(Eigen::Vector3d::Zero()), EmptySupport);
}

TEST(Metrics, MatchBruteForceExactly) {
  std::mt19937_64 rng(13);
  for (std::size_t n : {1u, 10u, 500u, 3000u}) {
    const PointCloud a = random_cloud(rng, n, 2.0);
    const PointCloud b = random_cloud(rng, n + 7, 2.0);
    const auto want = testing::brute_metrics(a, b, 0.5, 0.3);
    const auto dtu = dtu_metrics(a, b, 0.5);
    const auto fs = f_score(a, b, 0.3);
    EXPECT_EQ(dtu.accuracy, want.accuracy);
    EXPECT_EQ(dtu.completeness, want.completeness);
    EXPECT_EQ(dtu.overall, want.overall);
    EXPECT_EQ(fs.precision, want.precision);
    EXPECT_EQ(fs.recall, want.recall);
    EXPECT_EQ(fs.f, want.f);
  }
}

TEST(Metrics, IdenticalCloudsArePerfect) {
  std::mt19937_64 rng(14);
  const PointCloud a = random_cloud(rng, 1000, 3.0);
  const auto dtu = dtu_metrics(a, a);
  EXPECT_EQ(dtu.accuracy, 0.0);
  EXPECT_EQ(dtu.completeness, 0.0);
  EXPECT_EQ(dtu.overall, 0.0);
  const auto fs = f_score(a, a, 1e-9);
  EXPECT_EQ(fs.precision, 1.0);
  EXPECT_EQ(fs.recall, 1.0);
  EXPECT_EQ(fs.f, 1.0);
}

TEST(Metrics, TranslatedGridReportsTranslation) {
  const PointCloud gt = grid_cloud(10, 1.0, Eigen::Vector3d::Zero());
  const Eigen::Vector3d shift(0.12, -0.2, 0.05);
  const PointCloud recon = grid_cloud(10, 1.0, shift);
  const auto dtu = dtu_metrics(recon, gt);
  EXPECT_NEAR(dtu.accuracy, shift.norm(), 1e-3);
  EXPECT_NEAR(dtu.completeness, shift.norm(), 1e-3);
  EXPECT_EQ(f_score(recon, gt, shift.norm() * 1.01).f, 1.0);
  EXPECT_EQ(f_score(recon, gt, shift.norm() * 0.99).f, 0.0);
}

TEST(Metrics, ThresholdIsStrictAndDistancesCapped) {
  PointCloud a, b;
  a.points = {{0, 0, 0}};
  b.points = {{3, 0, 0}};
  EXPECT_EQ(f_score(a, b, 3.0).f, 0.0);
  EXPECT_EQ(f_score(a, b, std::nextafter(3.0, 4.0)).f, 1.0);
  EXPECT_EQ(dtu_metrics(a, b, 1.0).overall, 1.0);
  EXPECT_THROW(dtu_metrics(a, PointCloud{}), EmptySupport);
  EXPECT_THROW(f_score(a, b, 0.0), InvalidArgument);
}

TEST(VoxelMerge, AveragesPerCellInFirstOccurrenceOrder) {
  PointCloud c;
  c.points = {{5.1, 0.1, 0.1}, {0.2, 0.2, 0.2}, {5.3, 0.3, 0.3}, {0.4, 0.0, 0.0}};
  c.colors = {{10, 0, 0}, {0, 0, 0}, {20, 0, 0}, {0, 0, 9}};
  const PointCloud m = voxel_merge(c, 1.0);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_NEAR((m.points[0] - Eigen::Vector3d(5.2, 0.2, 0.2)).norm(), 0.0, 1e-12);
  EXPECT_NEAR((m.points[1] - Eigen::Vector3d(0.3, 0.1, 0.1)).norm(), 0.0, 1e-12);
  EXPECT_EQ(m.colors[0][0], 15);
  EXPECT_EQ(m.colors[1][2], 5);  // 4.5 rounds away from zero
  EXPECT_THROW(voxel_merge(c, 0.0), InvalidArgument);
}

class RenderedFusion : public ::testing::Test {
 protected:
  void SetUp() override {
    spec_ = acceptance_scene(48, 48, 3, 0);
    views_ = render(spec_);
    for (const auto& v : views_) depths_.push_back(v.depth);
    graph_ = default_view_graph(spec_);
  }
  SceneSpec spec_;
  std::vector<RenderedView> views_;
  std::vector<DepthMap> depths_;
  ViewGraph graph_;
};

TEST_F(RenderedFusion, GroundTruthDepthsAreConsistent) {
  FusionConfig cfg;
  cfg.min_consistent_views = 2;
  const auto masks = filter_depths(depths_, spec_.cameras, graph_, cfg);
  for (std::size_t v = 0; v < masks.size(); ++v) {
    EXPECT_GT(static_cast<double>(count(masks[v])), 0.6 * count(depths_[v].valid)) << v;
  }
}

TEST_F(RenderedFusion, CorruptedDepthIsRejected) {
  FusionConfig cfg;
  cfg.min_consistent_views = 1;
  std::vector<DepthMap> bad = depths_;
  for (auto& d : bad[0].depth.data()) d *= 1.1;
  const auto masks = filter_depths(bad, spec_.cameras, graph_, cfg);
  EXPECT_EQ(count(masks[0]), 0u);
}

TEST_F(RenderedFusion, TooFewNeighborsWarnsAndEmptiesMask) {
  std::vector<std::string> warnings;
  const auto masks = filter_depths(depths_, spec_.cameras, graph_, FusionConfig{}, &warnings);
  EXPECT_EQ(warnings.size(), 3u);
  for (const auto& m : masks) EXPECT_EQ(count(m), 0u);
  EXPECT_THROW(filter_depths(depths_, spec_.cameras, ViewGraph{}, FusionConfig{}), InvalidArgument);
}

TEST_F(RenderedFusion, FusedPointsLieOnTheSurface) {
  std::vector<Mask> all;
  std::vector<Raster> images;
  for (const auto& v : views_) {
    all.push_back(v.depth.valid);
    images.push_back(v.image);
  }
  FuseOptions raw;
  raw.voxel_size = 0.0;
  const PointCloud cloud = fuse(depths_, all, images, spec_.cameras, raw);
  std::size_t expected = 0;
  for (const auto& d : depths_) expected += count(d.valid);
  ASSERT_EQ(cloud.size(), expected);
  ASSERT_TRUE(cloud.has_colors());
  // The first view's pixels come first, in raster order.
  std::size_t i = 0;
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 48; ++x) {
      if (!views_[0].depth.is_valid(x, y)) continue;
      EXPECT_NEAR((cloud.points[i++] - views_[0].points(x, y)).norm(), 0.0, 1e-9);
    }
  }
  const PointCloud merged = fuse(depths_, all, images, spec_.cameras);
  EXPECT_LT(merged.size(), cloud.size());
}

}  // namespace
}  // namespace uamvs
