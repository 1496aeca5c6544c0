#pragma once

// Geometric-consistency filtering, point-cloud fusion and cloud-to-cloud
// metrics (accuracy / completeness / F-score).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "uamvs/geometry.hpp"
#include "uamvs/grid.hpp"
#include "uamvs/scene_io.hpp"

namespace uamvs {

struct FusionConfig {
  double geo_depth_tol = 0.01;  // relative
  double geo_pix_tol = 1.0;     // pixels
  int min_consistent_views = 3;

  void validate() const;
};

// A pixel survives when at least min_consistent_views of its graph neighbors
// agree: reproject into the neighbor, read its depth at the nearest pixel,
// reproject back and compare pixel position and relative depth. When the
// config asks for more neighbors than a view has, that view's mask is empty
// and a message is appended to `warnings`.
std::vector<Mask> filter_depths(std::span<const DepthMap> depths, std::span<const Camera> cameras,
                                const ViewGraph& graph, const FusionConfig& config,
                                std::vector<std::string>* warnings = nullptr);

struct FuseOptions {
  // Voxel cell for duplicate merging; unset means half the smallest depth
  // interval of the cameras, 0 disables merging.
  std::optional<double> voxel_size;
  int hypotheses = 192;
};

PointCloud fuse(std::span<const DepthMap> depths, std::span<const Mask> masks,
                std::span<const Raster> images, std::span<const Camera> cameras,
                const FuseOptions& options = {});

// Averages points (and colors) sharing a voxel; output ordered by first
// occurrence.
PointCloud voxel_merge(const PointCloud& cloud, double cell);

// Exact nearest neighbor in 3D. Immutable after construction; ties go to the
// smallest point index.
class KdTree {
 public:
  explicit KdTree(std::vector<Eigen::Vector3d> points);

  struct Hit {
    std::size_t index = 0;
    double distance = 0.0;
  };

  Hit nearest(const Eigen::Vector3d& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t begin, end;  // range into order_
    int axis;                // -1 for leaves
    double split;
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end);
  void search(int node, const Eigen::Vector3d& q, std::size_t& best, double& best_d2) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

// Distance used everywhere: sqrt of the squared Euclidean norm.
double point_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

inline constexpr double kDefaultMaxDist = 20.0;

struct DtuMetrics {
  double accuracy = 0.0;
  double completeness = 0.0;
  double overall = 0.0;
};

// Means of capped nearest-neighbor distances, recon -> gt and gt -> recon.
// Throws EmptySupport for an empty cloud.
DtuMetrics dtu_metrics(const PointCloud& recon, const PointCloud& gt, double max_dist = kDefaultMaxDist);

struct FScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

// A point counts when its nearest neighbor lies strictly closer than
// `threshold`.
FScore f_score(const PointCloud& recon, const PointCloud& gt, double threshold);

}  // namespace uamvs
