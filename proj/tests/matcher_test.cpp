#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "uamvs/matcher.hpp"
#include "uamvs/synth.hpp"

namespace uamvs {
namespace {

using testing::intrinsic;

CostVolume volume_from(const std::vector<std::vector<double>>& costs, const std::vector<double>& depths) {
  CostVolume v;
  v.width = static_cast<int>(costs.size());
  v.height = 1;
  v.depths = depths;
  v.pixel_valid = Mask(v.width, 1, 1);
  for (const auto& c : costs) {
    v.cost.insert(v.cost.end(), c.begin(), c.end());
    v.counted.insert(v.counted.end(), c.size(), 1);
  }
  return v;
}

TEST(Hypotheses, UniformAndInverseSpacing) {
  const auto lin = hypothesis_depths(2.0, 4.0, 5, false);
  EXPECT_EQ(lin, (std::vector<double>{2.0, 2.5, 3.0, 3.5, 4.0}));
  const auto inv = hypothesis_depths(2.0, 4.0, 3, true);
  EXPECT_EQ(inv.front(), 2.0);
  EXPECT_DOUBLE_EQ(inv[1], 1.0 / 0.375);
  EXPECT_EQ(inv.back(), 4.0);
  EXPECT_THROW(hypothesis_depths(2.0, 4.0, 1, false), InvalidArgument);
  EXPECT_THROW(hypothesis_depths(0.0, 4.0, 3, false), InvalidArgument);
}

TEST(SoftArgmin, ClosedFormTwoHypotheses) {
  const CostVolume v = volume_from({{0.0, std::log(3.0)}, {5.0, 5.0}}, {1.0, 2.0});
  const DepthEstimate e = soft_argmin_depth(v, 1.0);
  // Weights 3/4 and 1/4.
  EXPECT_DOUBLE_EQ(e.depth.depth[0], 1.25);
  EXPECT_DOUBLE_EQ(e.variance[0], 0.75 * 0.0625 + 0.25 * 0.5625);
  EXPECT_DOUBLE_EQ(e.depth.depth[1], 1.5);
  // Lower temperature sharpens towards the arg-min.
  EXPECT_LT(soft_argmin_depth(v, 0.1).depth.depth[0], 1.001);
  EXPECT_THROW(soft_argmin_depth(v, 0.0), InvalidArgument);
}

TEST(SoftArgmin, InvalidPixelsStayInvalid) {
  CostVolume v = volume_from({{0.0, 1.0}}, {1.0, 2.0});
  v.pixel_valid[0] = 0;
  EXPECT_EQ(soft_argmin_depth(v).depth.valid[0], 0);
}

TEST(Dropout, ZeroRateEqualsSoftArgminAndSeedsAreReproducible) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<std::vector<double>> costs(50, std::vector<double>(16));
  for (auto& c : costs)
    for (auto& x : c) x = u(rng);
  const CostVolume v = volume_from(costs, hypothesis_depths(1.0, 4.0, 16, false));
  EXPECT_EQ(dropout_sample(v, 0.0, 1.0, 99).depth.depth, soft_argmin_depth(v).depth.depth);
  const auto a = dropout_sample(v, 0.3, 1.0, 7);
  const auto b = dropout_sample(v, 0.3, 1.0, 7);
  const auto c = dropout_sample(v, 0.3, 1.0, 8);
  EXPECT_EQ(a.depth.depth, b.depth.depth);
  EXPECT_NE(a.depth.depth, c.depth.depth);
  EXPECT_THROW(dropout_sample(v, 1.0, 1.0, 0), InvalidArgument);
}

TEST(Dropout, RenormalizesOverSurvivors) {
  // With two hypotheses every outcome is one of: both kept, one kept, none.
  const CostVolume v = volume_from(std::vector<std::vector<double>>(2000, {0.0, 0.0}), {1.0, 3.0});
  const auto e = dropout_sample(v, 0.5, 1.0, 3);
  std::size_t invalid = 0;
  for (std::size_t i = 0; i < e.depth.valid.size(); ++i) {
    if (!e.depth.valid[i]) {
      ++invalid;
      continue;
    }
    const double d = e.depth.depth[i];
    EXPECT_TRUE(d == 1.0 || d == 2.0 || d == 3.0) << d;
  }
  EXPECT_GT(invalid, 400u);  // about a quarter
  EXPECT_LT(invalid, 600u);
}

TEST(McSample, DeterministicStackOfRequestedSize) {
  const CostVolume v = volume_from({{0.0, 1.0, 2.0}, {2.0, 1.0, 0.0}}, {1.0, 2.0, 3.0});
  SamplerSpec spec;
  spec.samples = 5;
  spec.seed = 42;
  const auto a = mc_sample(v, spec);
  const auto b = mc_sample(v, spec);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a.depths[k].depth, b.depths[k].depth);
  spec.samples = 1;
  EXPECT_THROW(mc_sample(v, spec), InvalidArgument);
}

// Independent cost at one interior pixel: warp every patch position and its
// forward neighbors, build the descriptors, take the across-view variance.
double brute_cost(const View& ref, std::span<const View> sources, int x, int y, double depth, double scale) {
  std::vector<std::vector<double>> desc;
  auto build = [&](auto value_at) {
    std::vector<double> v(75);
    double mean = 0.0;
    for (int oy = -2; oy <= 2; ++oy)
      for (int ox = -2; ox <= 2; ++ox) mean += value_at(x + ox, y + oy);
    mean /= 25.0;
    int k = 0;
    for (int oy = -2; oy <= 2; ++oy) {
      for (int ox = -2; ox <= 2; ++ox) {
        const double c = value_at(x + ox, y + oy);
        v[k] = c - mean;
        v[25 + k] = value_at(x + ox + 1, y + oy) - c;
        v[50 + k] = value_at(x + ox, y + oy + 1) - c;
        ++k;
      }
    }
    return v;
  };
  const Raster ref_gray = to_gray(ref.image);
  desc.push_back(build([&](int px, int py) { return ref_gray.at(px, py, 0); }));
  for (const View& s : sources) {
    const Raster g = to_gray(s.image);
    desc.push_back(build([&](int px, int py) {
      const auto r = reproject_point(Eigen::Vector2d(px, py), depth, ref.camera, s.camera);
      return sample_bilinear(g, r.pixel.x(), r.pixel.y(), 0).value;
    }));
  }
  double total = 0.0;
  for (int e = 0; e < 75; ++e) {
    double mean = 0.0;
    for (const auto& d : desc) mean += d[e];
    mean /= desc.size();
    for (const auto& d : desc) total += (d[e] - mean) * (d[e] - mean);
  }
  return scale * total / (desc.size() * 75.0);
}

TEST(CostVolume, MatchesBruteForceOnInteriorPixels) {
  const SceneSpec spec = acceptance_scene(40, 40, 3, 1);
  const auto views = render(spec);
  const View ref{views[0].image, spec.cameras[0]};
  const std::vector<View> sources{{views[1].image, spec.cameras[1]}, {views[2].image, spec.cameras[2]}};
  CostVolumeOptions opt;
  opt.hypotheses = 24;
  const CostVolume cv = build_cost_volume(ref, sources, opt);
  ASSERT_FALSE(cv.degenerate);
  int checked = 0;
  for (int y = 14; y < 26; y += 3) {
    for (int x = 14; x < 26; x += 3) {
      for (std::size_t k = 0; k < cv.hypotheses(); k += 5) {
        const double want = brute_cost(ref, sources, x, y, cv.depths[k], opt.cost_scale);
        EXPECT_NEAR(cv.at(x, y, k), want, 1e-9 * std::max(1.0, want));
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(CostVolume, MinimumNearGroundTruth) {
  const SceneSpec spec = acceptance_scene(64, 64, 3, 2);
  const auto views = render(spec);
  const View ref{views[0].image, spec.cameras[0]};
  const std::vector<View> sources{{views[1].image, spec.cameras[1]}, {views[2].image, spec.cameras[2]}};
  CostVolumeOptions opt;
  opt.hypotheses = 96;
  const CostVolume cv = build_cost_volume(ref, sources, opt);
  const double spacing = cv.depths[1] - cv.depths[0];
  int good = 0, total = 0;
  for (int y = 8; y < 56; ++y) {
    for (int x = 8; x < 56; ++x) {
      if (!views[0].depth.is_valid(x, y) || !cv.pixel_valid(x, y)) continue;
      std::size_t best = 0;
      for (std::size_t k = 1; k < cv.hypotheses(); ++k)
        if (cv.at(x, y, k) < cv.at(x, y, best)) best = k;
      good += std::abs(cv.depths[best] - views[0].depth.depth(x, y)) <= 2 * spacing;
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(good) / total, 0.9);
}

TEST(CostVolume, DegenerateWhenSourcesSeeNothing) {
  View ref{Raster(12, 12, 1, 0.5), Camera{}};
  ref.camera.K = intrinsic(12, 12, 12);
  View src = ref;
  src.camera.R = Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const std::vector<View> sources{src};
  CostVolumeOptions opt;
  opt.hypotheses = 4;
  const CostVolume cv = build_cost_volume(ref, sources, opt);
  EXPECT_TRUE(cv.degenerate);
  EXPECT_EQ(count(soft_argmin_depth(cv).depth.valid), 0u);
  opt.memory_budget = 10;
  EXPECT_THROW(build_cost_volume(ref, sources, opt), InvalidArgument);
}

TEST(BlockMatch, RecoversIntegerShift) {
  std::mt19937_64 rng(16);
  const int w = 64, h = 48;
  // Blurred noise gives a unique SSD minimum.
  Raster noise = testing::random_raster(rng, w + 8, h + 8, 1);
  Raster a(w, h, 1), b(w, h, 1);
  auto blurred = [&](int x, int y) {
    double s = 0.0;
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) s += noise.at(x + dx, y + dy, 0);
    return s / 4.0;
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      a.at(x, y, 0) = blurred(x + 4, y + 4);
      b.at(x, y, 0) = blurred(x + 4 - 3, y + 4 - 2);  // b(p + (3, 2)) = a(p)
    }
  }
  const FlowField f = block_match_flow(a, b);
  int good = 0, total = 0;
  for (int y = 8; y < h - 8; ++y) {
    for (int x = 8; x < w - 8; ++x) {
      good += (f(x, y) - Eigen::Vector2d(3, 2)).norm() < 0.25;
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(good) / total, 0.95);
  BlockMatchOptions bad;
  bad.window = 4;
  EXPECT_THROW(block_match_flow(a, b, bad), InvalidArgument);
}

}  // namespace
}  // namespace uamvs
