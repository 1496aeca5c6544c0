#pragma once

// Deterministic ray-cast renderer for textured planes and spheres. Produces
// images, exact depth, exact cross-view flow and visibility, and a ground
// truth point cloud.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "uamvs/geometry.hpp"
#include "uamvs/grid.hpp"
#include "uamvs/scene_io.hpp"

namespace uamvs {

struct Texture {
  enum class Kind { kConstant, kChecker, kNoise };
  Kind kind = Kind::kNoise;
  Eigen::Vector3d color_a{0.8, 0.8, 0.8};
  Eigen::Vector3d color_b{0.2, 0.2, 0.2};
  double scale = 1.0;   // checker cell size / noise feature size (world units)
  int octaves = 3;
  std::uint64_t seed = 0;
  // Optional constant band: positions with band_min <= p·band_axis <= band_max
  // take band_color regardless of kind.
  bool has_band = false;
  Eigen::Vector3d band_axis = Eigen::Vector3d::UnitY();
  double band_min = 0.0;
  double band_max = 0.0;
  Eigen::Vector3d band_color{0.55, 0.55, 0.55};

  // Albedo at a world position. Deterministic in (position, seed).
  Eigen::Vector3d albedo(const Eigen::Vector3d& p) const;
};

struct Primitive {
  enum class Kind { kPlane, kSphere };
  Kind kind = Kind::kPlane;
  // Plane: point on the plane and unit normal; optional rectangle extent
  // along two in-plane axes. Sphere: center and radius.
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d axis_u = Eigen::Vector3d::UnitX();
  Eigen::Vector3d axis_v = Eigen::Vector3d::UnitY();
  std::optional<Eigen::Vector2d> half_extent;
  double radius = 1.0;
  Texture texture;
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  std::vector<Camera> cameras;
  int width = 64;
  int height = 64;
  std::uint64_t seed = 0;
  Eigen::Vector3d light_dir{0.3, -0.5, -1.0};  // direction the light travels
  double ambient = 0.35;
  double diffuse = 0.65;
  // Adds a view-dependent highlight, breaking photometric consistency.
  bool specular = false;
  int hypotheses = 192;
};

struct RayHit {
  double t = 0.0;  // ray parameter; equals camera depth for z-unit rays
  int primitive = -1;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
};

// Nearest hit with t > 1e-9 along origin + t·dir.
std::optional<RayHit> cast_ray(const SceneSpec& spec, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);

struct RenderedView {
  Raster image;
  DepthMap depth;
  Grid<Eigen::Vector3d> points;  // world hit points, valid where depth is
  Grid<int> primitive;           // -1 for background
};

// Throws InvalidArgument when a camera sits inside a sphere or sees nothing.
std::vector<RenderedView> render(const SceneSpec& spec);

struct GroundTruthFlow {
  FlowField forward;   // a -> b
  FlowField backward;  // b -> a
  Mask occluded_forward;   // a's hit point hidden or out of frame in b
  Mask occluded_backward;
};

GroundTruthFlow gt_flow(const SceneSpec& spec, const std::vector<RenderedView>& views, int view_a, int view_b);

PointCloud gt_point_cloud(const std::vector<RenderedView>& views);

// Fully textured noise scene with continuous depth: a tilted plane with two
// sphere caps pushed up out of it. `textureless_strip` paints a
// constant-albedo band across the top of the plane.
SceneSpec acceptance_scene(int width, int height, int views, std::uint64_t seed, bool textureless_strip = false);

// Two fronto-parallel textured planes, the nearer one covering part of the
// farther, seen by two horizontally displaced cameras.
SceneSpec occlusion_scene(int width, int height, std::uint64_t seed);

// Pair graph: every other view, ordered by camera-center distance.
ViewGraph default_view_graph(const SceneSpec& spec);

// Writes images/, depths/, flows/, cams/, pair.txt and gt.ply.
void write_dataset(const std::filesystem::path& dir, const SceneSpec& spec, const std::vector<RenderedView>& views);

}  // namespace uamvs
