#pragma once

// Pinhole cameras, cross-view reprojection, warp fields, bilinear sampling
// and the depth-to-flow transform.
//
// Pixel centers sit at integer coordinates and homogeneous pixels are
// (x, y, 1). Camera coordinates follow x_cam = R * x_world + t.

#include <utility>

#include <Eigen/Core>

#include "uamvs/grid.hpp"
#include "uamvs/scene_io.hpp"

namespace uamvs {

// Source-frame depth at or below this is behind (or on) the image plane.
inline constexpr double kMinProjectedDepth = 1e-6;

struct Camera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  double depth_min = 1.0;
  double depth_max = 2.0;

  // Throws InvalidArgument unless R is a rotation (1e-6) and K is an
  // upper-triangular intrinsic matrix with K(2,2) = 1.
  void validate() const;

  Eigen::Vector3d center() const { return -R.transpose() * t; }
  Eigen::Vector3d backproject(const Eigen::Vector2d& pixel, double depth) const;

  // Missing depth_max is filled in from depth_count, or `default_count`
  // hypotheses when the file has neither.
  static Camera from_file(const CameraFile& file, int default_count = 192);
  CameraFile to_file(int hypotheses = 192) const;

  // Camera at `eye` looking at `target`, y axis of the image roughly along
  // -`up`.
  static Camera look_at(const Eigen::Matrix3d& K, const Eigen::Vector3d& eye,
                        const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                        double depth_min, double depth_max);
};

// Maps (reference pixel, reference depth) to the source view. The transfer
// is q = depth * M * p_h + c with M = K_s R_s R_r^T K_r^-1, and the source
// pixel is q normalized by its third component.
class ViewTransfer {
 public:
  ViewTransfer(const Camera& ref, const Camera& src);

  struct Result {
    Eigen::Vector2d pixel;      // continuous source coordinate
    double depth;               // z in the source camera frame
    Eigen::Vector2d d_pixel;    // d(pixel)/d(depth)
    bool valid;                 // depth > kMinProjectedDepth
  };

  Result apply(const Eigen::Vector2d& pixel, double depth) const;

 private:
  Eigen::Matrix3d M_;
  Eigen::Vector3d c_;
};

struct Reprojection {
  Eigen::Vector2d pixel;
  double depth = 0.0;
  bool valid = false;
};

// Throws InvalidArgument when depth <= 0.
Reprojection reproject_point(const Eigen::Vector2d& pixel, double depth, const Camera& ref,
                             const Camera& src);

struct WarpField {
  Grid<Eigen::Vector2d> coords;    // source coordinates per reference pixel
  Grid<Eigen::Vector2d> jacobian;  // d(coords)/d(depth)
  Grid<double> source_depth;
  Mask valid;                      // depth valid, in front, inside the source
};

// `src_width`/`src_height` default to the depth map dimensions.
WarpField warp_field(const DepthMap& depth, const Camera& ref, const Camera& src,
                     int src_width = -1, int src_height = -1);

struct VirtualFlow {
  FlowField flow;                  // reprojected pixel minus pixel
  Grid<Eigen::Vector2d> jacobian;  // d(flow)/d(depth)
  Mask valid;
};

VirtualFlow depth_to_flow(const DepthMap& depth, const Camera& ref, const Camera& src,
                          int src_width = -1, int src_height = -1);

struct BilinearSample {
  double value = 0.0;
  double dx = 0.0;  // d(value)/dx
  double dy = 0.0;  // d(value)/dy
  bool inside = false;
};

// Inside iff 0 <= x <= W-1 and 0 <= y <= H-1. The last row/column is reached
// with weight 1 from its left/upper cell so every inside sample has four
// in-range neighbors.
BilinearSample sample_bilinear(const Raster& image, double x, double y, int channel);
Eigen::Vector2d sample_flow(const FlowField& flow, double x, double y, bool* inside);

struct SampledImage {
  Raster values;  // zero where outside
  Raster dx;
  Raster dy;
  Mask inbounds;
};

SampledImage bilinear_sample(const Raster& image, const Grid<Eigen::Vector2d>& coords);

// Forward differences with replicate padding; the last column of Gx and last
// row of Gy are zero. Needs width and height >= 2.
std::pair<Raster, Raster> image_gradient(const Raster& image);

}  // namespace uamvs
