#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "uamvs/geometry.hpp"

namespace uamvs {
namespace {

using testing::intrinsic;
using testing::random_camera;

// Independent projection: world point into a camera's pixel frame.
Eigen::Vector2d project(const Camera& cam, const Eigen::Vector3d& world, double* z = nullptr) {
  const Eigen::Vector3d c = cam.R * world + cam.t;
  if (z) *z = c.z();
  const Eigen::Vector3d p = cam.K * c;
  return p.head<2>() / p.z();
}

TEST(Camera, ValidateRejectsBadParameters) {
  Camera cam;
  cam.K = intrinsic(10, 8, 8);
  EXPECT_NO_THROW(cam.validate());
  Camera skewed = cam;
  skewed.R(0, 1) = 0.1;
  EXPECT_THROW(skewed.validate(), InvalidArgument);
  Camera reflected = cam;
  reflected.R(2, 2) = -1.0;
  EXPECT_THROW(reflected.validate(), InvalidArgument);
  Camera bad_k = cam;
  bad_k.K(2, 2) = 2.0;
  EXPECT_THROW(bad_k.validate(), InvalidArgument);
  Camera bad_range = cam;
  bad_range.depth_max = bad_range.depth_min;
  EXPECT_THROW(bad_range.validate(), InvalidArgument);
}

TEST(Camera, FileConversionFillsDepthMax) {
  CameraFile f;
  f.intrinsic = intrinsic(100, 64, 48);
  f.depth_min = 2.0;
  f.depth_interval = 0.5;
  EXPECT_DOUBLE_EQ(Camera::from_file(f).depth_max, 2.0 + 0.5 * 191);
  f.depth_count = 11;
  EXPECT_DOUBLE_EQ(Camera::from_file(f).depth_max, 7.0);
  f.depth_max = 9.0;
  const Camera cam = Camera::from_file(f);
  EXPECT_EQ(cam.depth_max, 9.0);
  const CameraFile back = cam.to_file(8);
  EXPECT_DOUBLE_EQ(back.depth_interval, 1.0);
  EXPECT_EQ(back.depth_count, 8);
}

TEST(Camera, LookAtPutsTargetOnAxis) {
  const Eigen::Matrix3d K = intrinsic(50, 31, 21);
  const Camera cam = Camera::look_at(K, {1, 2, -3}, {0, 0, 10}, {0, -1, 0}, 1, 20);
  const Eigen::Vector2d p = project(cam, {0, 0, 10});
  EXPECT_NEAR(p.x(), 15.0, 1e-9);
  EXPECT_NEAR(p.y(), 10.0, 1e-9);
  EXPECT_NEAR((cam.center() - Eigen::Vector3d(1, 2, -3)).norm(), 0.0, 1e-12);
}

TEST(Reprojection, MatchesBackprojectThenProject) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 30.0), d(2.0, 9.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Matrix3d K = intrinsic(40, 32, 32);
    const Camera ref = random_camera(rng, K, {0, 0, 0}, 0.1);
    const Camera src = random_camera(rng, K, {u(rng) * 0.02, u(rng) * 0.02, 0.1}, 0.1);
    const Eigen::Vector2d px(u(rng), u(rng));
    const double depth = d(rng);
    const Eigen::Vector3d world = ref.backproject(px, depth);
    double z = 0.0;
    const Eigen::Vector2d expected = project(src, world, &z);
    const Reprojection r = reproject_point(px, depth, ref, src);
    EXPECT_TRUE(r.valid);
    EXPECT_NEAR((r.pixel - expected).norm(), 0.0, 1e-9);
    EXPECT_NEAR(r.depth, z, 1e-9);
    // Back into the reference lands on the original pixel.
    const Reprojection back = reproject_point(r.pixel, r.depth, src, ref);
    EXPECT_NEAR((back.pixel - px).norm(), 0.0, 1e-8);
    EXPECT_NEAR(back.depth, depth, 1e-9);
  }
  EXPECT_THROW(reproject_point({0, 0}, 0.0, Camera{}, Camera{}), InvalidArgument);
}

TEST(Reprojection, BehindCameraIsInvalid) {
  Camera ref;
  Camera src;
  src.R = Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitY()).toRotationMatrix();
  EXPECT_FALSE(reproject_point({0.1, 0.2}, 3.0, ref, src).valid);
}

TEST(ViewTransfer, DepthDerivativeMatchesFiniteDifference) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 30.0), d(2.0, 9.0);
  const Eigen::Matrix3d K = intrinsic(40, 32, 32);
  for (int trial = 0; trial < 100; ++trial) {
    const Camera ref = random_camera(rng, K, {0, 0, 0}, 0.2);
    const Camera src = random_camera(rng, K, {0.5, -0.2, 0.3}, 0.2);
    const ViewTransfer vt(ref, src);
    const Eigen::Vector2d px(u(rng), u(rng));
    const double depth = d(rng);
    const double h = 1e-6 * depth;
    const Eigen::Vector2d fd = (vt.apply(px, depth + h).pixel - vt.apply(px, depth - h).pixel) / (2 * h);
    const Eigen::Vector2d an = vt.apply(px, depth).d_pixel;
    EXPECT_LE((fd - an).norm(), 1e-6 * std::max(1.0, an.norm()));
  }
}

TEST(WarpField, FlowIsCoordsMinusPixelAndValidityChecksFrame) {
  std::mt19937_64 rng(3);
  const Eigen::Matrix3d K = intrinsic(12, 10, 8);
  const Camera ref = random_camera(rng, K, {0, 0, 0}, 0.05);
  const Camera src = random_camera(rng, K, {0.4, 0.1, 0}, 0.05);
  DepthMap depth = DepthMap::from_grid(testing::random_grid(rng, 10, 8, 3.0, 5.0));
  depth.valid(2, 3) = 0;
  const WarpField warp = warp_field(depth, ref, src);
  const VirtualFlow flow = depth_to_flow(depth, ref, src);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 10; ++x) {
      if (!depth.is_valid(x, y)) {
        EXPECT_EQ(warp.valid(x, y), 0);
        continue;
      }
      const Reprojection r = reproject_point(Eigen::Vector2d(x, y), depth.depth(x, y), ref, src);
      EXPECT_NEAR((warp.coords(x, y) - r.pixel).norm(), 0.0, 1e-12);
      EXPECT_NEAR((flow.flow(x, y) - (r.pixel - Eigen::Vector2d(x, y))).norm(), 0.0, 1e-12);
      const bool inside = r.pixel.x() >= 0 && r.pixel.y() >= 0 && r.pixel.x() <= 9 && r.pixel.y() <= 7;
      EXPECT_EQ(warp.valid(x, y) != 0, inside);
      EXPECT_EQ(flow.valid(x, y), warp.valid(x, y));
    }
  }
}

TEST(Bilinear, ExactOnGridAndLinearBetween) {
  Raster img(3, 2, 1);
  img.samples() = {0, 1, 4, 2, 3, 8};
  EXPECT_EQ(sample_bilinear(img, 2, 1, 0).value, 8.0);
  EXPECT_EQ(sample_bilinear(img, 0, 0, 0).value, 0.0);
  const auto mid = sample_bilinear(img, 0.5, 0.5, 0);
  EXPECT_DOUBLE_EQ(mid.value, 1.5);
  EXPECT_DOUBLE_EQ(mid.dx, 1.0);
  EXPECT_DOUBLE_EQ(mid.dy, 2.0);
  // Last column is reached from its left cell.
  const auto edge = sample_bilinear(img, 2.0, 0.5, 0);
  EXPECT_TRUE(edge.inside);
  EXPECT_DOUBLE_EQ(edge.value, 6.0);
  EXPECT_DOUBLE_EQ(edge.dx, 4.0);
  EXPECT_FALSE(sample_bilinear(img, 2.0000001, 0, 0).inside);
  EXPECT_FALSE(sample_bilinear(img, -1e-12, 0, 0).inside);
  EXPECT_FALSE(sample_bilinear(img, std::nan(""), 0, 0).inside);
}

TEST(Bilinear, GradientMatchesFiniteDifferenceInsideCells) {
  std::mt19937_64 rng(4);
  const Raster img = testing::random_raster(rng, 6, 5, 2);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::uniform_int_distribution<int> cx(0, 4), cy(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = cx(rng) + u(rng);
    const double y = cy(rng) + u(rng);
    const int c = trial % 2;
    const double h = 1e-6;
    const auto s = sample_bilinear(img, x, y, c);
    const double fdx = (sample_bilinear(img, x + h, y, c).value - sample_bilinear(img, x - h, y, c).value) / (2 * h);
    const double fdy = (sample_bilinear(img, x, y + h, c).value - sample_bilinear(img, x, y - h, c).value) / (2 * h);
    EXPECT_NEAR(s.dx, fdx, 1e-8);
    EXPECT_NEAR(s.dy, fdy, 1e-8);
  }
}

TEST(ImageGradient, ForwardDifferencesWithZeroLastRowAndColumn) {
  Raster img(3, 2, 1);
  img.samples() = {0, 1, 4, 2, 3, 8};
  const auto [gx, gy] = image_gradient(img);
  EXPECT_EQ(gx.samples(), (std::vector<double>{1, 3, 0, 1, 5, 0}));
  EXPECT_EQ(gy.samples(), (std::vector<double>{2, 2, 4, 0, 0, 0}));
  EXPECT_THROW(image_gradient(Raster(1, 3, 1)), InvalidArgument);
}

}  // namespace
}  // namespace uamvs
