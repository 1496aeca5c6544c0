#include <cmath>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "uamvs/geometry.hpp"
#include "uamvs/losses.hpp"
#include "uamvs/synth.hpp"

namespace uamvs {
namespace {

TEST(CastRay, PlaneAndSphereHits) {
  SceneSpec spec;
  Primitive plane;
  plane.center = {0, 0, 10};
  plane.normal = {0, 0, -1};
  spec.primitives.push_back(plane);
  Primitive sphere;
  sphere.kind = Primitive::Kind::kSphere;
  sphere.center = {0, 0, 6};
  sphere.radius = 1.0;
  spec.primitives.push_back(sphere);

  const auto hit = cast_ray(spec, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->primitive, 1);
  EXPECT_NEAR(hit->t, 5.0, 1e-12);
  EXPECT_NEAR((hit->normal - Eigen::Vector3d(0, 0, -1)).norm(), 0.0, 1e-12);

  const auto miss_sphere = cast_ray(spec, {3, 0, 0}, Eigen::Vector3d::UnitZ());
  ASSERT_TRUE(miss_sphere);
  EXPECT_EQ(miss_sphere->primitive, 0);
  EXPECT_NEAR(miss_sphere->t, 10.0, 1e-12);
  EXPECT_FALSE(cast_ray(spec, {0, 0, 0}, -Eigen::Vector3d::UnitZ()));
}

TEST(CastRay, BoundedPlaneRespectsExtent) {
  SceneSpec spec;
  Primitive p;
  p.center = {0, 0, 5};
  p.normal = {0, 0, -1};
  p.axis_u = Eigen::Vector3d::UnitX();
  p.axis_v = Eigen::Vector3d::UnitY();
  p.half_extent = Eigen::Vector2d(1.0, 2.0);
  spec.primitives.push_back(p);
  EXPECT_TRUE(cast_ray(spec, {0.9, 1.9, 0}, Eigen::Vector3d::UnitZ()));
  EXPECT_FALSE(cast_ray(spec, {1.1, 0, 0}, Eigen::Vector3d::UnitZ()));
  EXPECT_FALSE(cast_ray(spec, {0, 2.1, 0}, Eigen::Vector3d::UnitZ()));
}

TEST(Render, DeterministicAndSeedDependent) {
  const auto a = render(acceptance_scene(32, 32, 3, 5));
  const auto b = render(acceptance_scene(32, 32, 3, 5));
  const auto c = render(acceptance_scene(32, 32, 3, 6));
  EXPECT_EQ(a[1].image, b[1].image);
  EXPECT_NE(a[1].image, c[1].image);
  EXPECT_EQ(a[1].depth.depth, c[1].depth.depth);
}

TEST(Render, DepthAndPointsAgreeWithBackprojection) {
  const SceneSpec spec = acceptance_scene(32, 32, 3, 0);
  const auto views = render(spec);
  for (std::size_t v = 0; v < views.size(); ++v) {
    EXPECT_EQ(count(views[v].depth.valid), 32u * 32u);
    for (int y = 0; y < 32; y += 3) {
      for (int x = 0; x < 32; x += 3) {
        const Eigen::Vector3d p = spec.cameras[v].backproject(Eigen::Vector2d(x, y), views[v].depth.depth(x, y));
        EXPECT_NEAR((p - views[v].points(x, y)).norm(), 0.0, 1e-9);
      }
    }
  }
}

TEST(Render, RejectsCameraInsideSphereOrEmptyView) {
  SceneSpec spec = acceptance_scene(16, 16, 2, 0);
  Primitive s;
  s.kind = Primitive::Kind::kSphere;
  s.center = spec.cameras[0].center();
  s.radius = 0.5;
  spec.primitives.push_back(s);
  EXPECT_THROW(render(spec), InvalidArgument);
  SceneSpec empty = acceptance_scene(16, 16, 2, 0);
  empty.primitives.clear();
  EXPECT_THROW(render(empty), InvalidArgument);
}

// Rendered flow equals the depth-induced flow of the rendered depth.
TEST(GtFlow, EqualsDepthToFlowOnVisiblePixels) {
  const SceneSpec spec = acceptance_scene(64, 64, 3, 0);
  const auto views = render(spec);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      if (a == b) continue;
      const GroundTruthFlow gt = gt_flow(spec, views, a, b);
      const VirtualFlow vf = depth_to_flow(views[a].depth, spec.cameras[a], spec.cameras[b]);
      std::size_t good = 0, total = 0;
      for (std::size_t i = 0; i < gt.occluded_forward.size(); ++i) {
        if (gt.occluded_forward[i]) continue;
        ++total;
        good += (gt.forward[i] - vf.flow[i]).norm() <= 1e-5;
      }
      ASSERT_GT(total, 0u);
      EXPECT_GE(static_cast<double>(good) / total, 0.99);
    }
  }
}

double round_trip_error(const SceneSpec& spec, int a, int b, std::size_t* checked) {
  const auto views = render(spec);
  const GroundTruthFlow gt = gt_flow(spec, views, a, b);
  double worst = 0.0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (gt.occluded_forward(x, y)) continue;
      const Eigen::Vector2d q = Eigen::Vector2d(x, y) + gt.forward(x, y);
      // Mutual visibility: the four cells around the landing point are visible
      // back in `a` and show the same surface.
      const int qx = static_cast<int>(std::floor(q.x()));
      const int qy = static_cast<int>(std::floor(q.y()));
      bool mutual = qx >= 0 && qy >= 0 && qx + 1 < 64 && qy + 1 < 64;
      for (int dy = 0; mutual && dy < 2; ++dy) {
        for (int dx = 0; mutual && dx < 2; ++dx) {
          mutual = !gt.occluded_backward(qx + dx, qy + dy) &&
                   views[b].primitive(qx + dx, qy + dy) == views[a].primitive(x, y);
        }
      }
      if (!mutual) continue;
      bool inside = false;
      const Eigen::Vector2d back = sample_flow(gt.backward, q.x(), q.y(), &inside);
      worst = std::max(worst, (gt.forward(x, y) + back).norm());
      ++*checked;
    }
  }
  return worst;
}

TEST(GtFlow, ForwardBackwardRoundTrip) {
  std::size_t checked = 0;
  // Fronto-parallel planes have piecewise-constant flow, so interpolation is
  // exact there.
  EXPECT_LE(round_trip_error(occlusion_scene(64, 64, 0), 0, 1, &checked), 1e-3);
  EXPECT_LE(round_trip_error(occlusion_scene(64, 64, 0), 1, 0, &checked), 1e-3);
  EXPECT_GT(checked, 4000u);
}

TEST(GtFlow, OcclusionSceneHasOccludedBand) {
  const SceneSpec spec = occlusion_scene(64, 64, 0);
  const auto views = render(spec);
  const GroundTruthFlow gt = gt_flow(spec, views, 0, 1);
  const std::size_t occluded = count(gt.occluded_forward);
  EXPECT_GT(occluded, 50u);
  EXPECT_LT(occluded, 64u * 64u / 2);
  // Warped forward-backward check recovers the ground truth.
  const Mask consistent = occlusion_mask(gt.forward, gt.backward);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < consistent.size(); ++i) agree += (consistent[i] != 0) == (gt.occluded_forward[i] == 0);
  EXPECT_GT(static_cast<double>(agree) / consistent.size(), 0.95);
}

TEST(Scene, TexturelessStripIsConstant) {
  const SceneSpec spec = acceptance_scene(64, 64, 3, 0, true);
  const auto views = render(spec);
  const Texture& tex = spec.primitives[0].texture;
  ASSERT_TRUE(tex.has_band);
  std::size_t in_band = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (views[0].primitive(x, y) != 0) continue;
      const double s = views[0].points(x, y).dot(tex.band_axis);
      if (s < tex.band_min || s > tex.band_max) continue;
      ++in_band;
      EXPECT_EQ(tex.albedo(views[0].points(x, y)), tex.band_color);
    }
  }
  EXPECT_GT(in_band, 200u);
}

TEST(Scene, ViewGraphOrdersByDistance) {
  const SceneSpec spec = occlusion_scene(16, 16, 0);
  const ViewGraph g = default_view_graph(spec);
  ASSERT_EQ(g.num_views, 2);
  EXPECT_EQ(g.neighbors[0].size(), 1u);
  EXPECT_EQ(g.neighbors[0][0].id, 1);
}

TEST(Dataset, WritesReadableLayout) {
  testing::TempDir dir("synth");
  const SceneSpec spec = acceptance_scene(24, 24, 3, 0);
  const auto views = render(spec);
  write_dataset(dir.path(), spec, views);
  const auto& p = dir.path();
  const Raster img = read_image(read_file(p / "images" / "00000001.ppm"));
  EXPECT_TRUE(img.same_shape(views[1].image));
  const DepthMap d = DepthMap::from_raster(read_pfm(read_file(p / "depths" / "00000000.pfm")).raster);
  EXPECT_NEAR(d.depth(5, 5), views[0].depth.depth(5, 5), 1e-5 * views[0].depth.depth(5, 5));
  const Camera cam = Camera::from_file(parse_camera(read_file(p / "cams" / "00000002_cam.txt")));
  EXPECT_NEAR((cam.R - spec.cameras[2].R).norm(), 0.0, 1e-12);
  EXPECT_EQ(parse_pairs(read_file(p / "pair.txt")), default_view_graph(spec));
  EXPECT_EQ(read_flo(read_file(p / "flows" / "00000000_00000001.flo")).width(), 24);
  EXPECT_TRUE(std::filesystem::exists(p / "flows" / "00000001_00000000_occ.pfm"));
  EXPECT_EQ(read_ply(read_file(p / "gt.ply")).size(), 3u * 24u * 24u);
}

}  // namespace
}  // namespace uamvs
