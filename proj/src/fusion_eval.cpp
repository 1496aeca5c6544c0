#include "uamvs/fusion_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "uamvs/uncertainty.hpp"

namespace uamvs {

void FusionConfig::validate() const {
  if (!(geo_depth_tol > 0.0)) throw InvalidArgument("geo_depth_tol must be positive");
  if (!(geo_pix_tol > 0.0)) throw InvalidArgument("geo_pix_tol must be positive");
  if (min_consistent_views < 1) throw InvalidArgument("min_consistent_views must be positive");
}

std::vector<Mask> filter_depths(std::span<const DepthMap> depths, std::span<const Camera> cameras,
                                const ViewGraph& graph, const FusionConfig& config,
                                std::vector<std::string>* warnings) {
  config.validate();
  const std::size_t n = depths.size();
  if (cameras.size() != n) throw InvalidArgument("depth and camera counts differ");
  if (graph.num_views == 0 || graph.neighbors.empty()) throw InvalidArgument("view graph is empty");
  if (static_cast<std::size_t>(graph.num_views) != n || graph.neighbors.size() != n) {
    throw InvalidArgument("view graph size differs from the number of depth maps");
  }

  std::vector<Mask> out;
  out.reserve(n);
  for (std::size_t v = 0; v < n; ++v) {
    const DepthMap& dm = depths[v];
    Mask keep(dm.width(), dm.height(), 0);
    const auto& nbs = graph.neighbors[v];
    if (static_cast<int>(nbs.size()) < config.min_consistent_views) {
      if (warnings) {
        warnings->push_back("view " + std::to_string(v) + " has " + std::to_string(nbs.size()) +
                            " neighbors, fewer than min_consistent_views=" +
                            std::to_string(config.min_consistent_views));
      }
      out.push_back(std::move(keep));
      continue;
    }
    std::vector<ViewTransfer> to_nb, from_nb;
    for (const auto& nb : nbs) {
      to_nb.emplace_back(cameras[v], cameras[nb.id]);
      from_nb.emplace_back(cameras[nb.id], cameras[v]);
    }
    for (int y = 0; y < dm.height(); ++y) {
      for (int x = 0; x < dm.width(); ++x) {
        if (!dm.is_valid(x, y)) continue;
        const double d = dm.depth(x, y);
        const Eigen::Vector2d p(x, y);
        int agree = 0;
        for (std::size_t k = 0; k < nbs.size(); ++k) {
          const DepthMap& other = depths[nbs[k].id];
          const auto fwd = to_nb[k].apply(p, d);
          if (!fwd.valid) continue;
          const long qx = std::lround(fwd.pixel.x());
          const long qy = std::lround(fwd.pixel.y());
          if (qx < 0 || qy < 0 || qx >= other.width() || qy >= other.height()) continue;
          if (!other.is_valid(static_cast<int>(qx), static_cast<int>(qy))) continue;
          const auto back = from_nb[k].apply(Eigen::Vector2d(static_cast<double>(qx), static_cast<double>(qy)),
                                             other.depth(static_cast<int>(qx), static_cast<int>(qy)));
          if (!back.valid) continue;
          if ((back.pixel - p).norm() <= config.geo_pix_tol && std::abs(back.depth - d) / d <= config.geo_depth_tol) {
            ++agree;
          }
        }
        keep(x, y) = agree >= config.min_consistent_views;
      }
    }
    out.push_back(std::move(keep));
  }
  return out;
}

PointCloud voxel_merge(const PointCloud& cloud, double cell) {
  if (!(cell > 0.0)) throw InvalidArgument("voxel size must be positive");
  struct Acc {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::map<std::tuple<long long, long long, long long>, Acc> cells;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Eigen::Vector3d& p = cloud.points[i];
    const auto key = std::make_tuple(static_cast<long long>(std::floor(p.x() / cell)),
                                     static_cast<long long>(std::floor(p.y() / cell)),
                                     static_cast<long long>(std::floor(p.z() / cell)));
    auto [it, inserted] = cells.try_emplace(key);
    if (inserted) it->second.first = i;
    it->second.sum += p;
    if (cloud.has_colors()) {
      for (int c = 0; c < 3; ++c) it->second.color[c] += cloud.colors[i][c];
    }
    ++it->second.count;
  }
  std::vector<const Acc*> ordered;
  ordered.reserve(cells.size());
  for (const auto& [key, acc] : cells) ordered.push_back(&acc);
  std::sort(ordered.begin(), ordered.end(), [](const Acc* a, const Acc* b) { return a->first < b->first; });

  PointCloud out;
  for (const Acc* acc : ordered) {
    const double inv = 1.0 / static_cast<double>(acc->count);
    out.points.push_back(acc->sum * inv);
    if (cloud.has_colors()) {
      std::array<std::uint8_t, 3> rgb{};
      for (int c = 0; c < 3; ++c) rgb[c] = static_cast<std::uint8_t>(std::lround(acc->color[c] * inv));
      out.colors.push_back(rgb);
    }
  }
  return out;
}

PointCloud fuse(std::span<const DepthMap> depths, std::span<const Mask> masks, std::span<const Raster> images,
                std::span<const Camera> cameras, const FuseOptions& options) {
  const std::size_t n = depths.size();
  if (masks.size() != n || cameras.size() != n || (!images.empty() && images.size() != n)) {
    throw InvalidArgument("fuse inputs differ in view count");
  }
  PointCloud cloud;
  const bool colored = !images.empty();
  for (std::size_t v = 0; v < n; ++v) {
    const DepthMap& dm = depths[v];
    if (!masks[v].same_shape(dm.depth)) throw InvalidArgument("mask and depth differ in size");
    if (colored && (images[v].width() != dm.width() || images[v].height() != dm.height())) {
      throw InvalidArgument("image and depth differ in size");
    }
    for (int y = 0; y < dm.height(); ++y) {
      for (int x = 0; x < dm.width(); ++x) {
        if (!masks[v](x, y) || !dm.is_valid(x, y)) continue;
        cloud.points.push_back(cameras[v].backproject(Eigen::Vector2d(x, y), dm.depth(x, y)));
        if (colored) {
          const Raster& img = images[v];
          std::array<std::uint8_t, 3> rgb{};
          for (int c = 0; c < 3; ++c) {
            const double s = img.at(x, y, std::min(c, img.channels() - 1));
            rgb[c] = static_cast<std::uint8_t>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0));
          }
          cloud.colors.push_back(rgb);
        }
      }
    }
  }

  double cell = 0.0;
  if (options.voxel_size) {
    cell = *options.voxel_size;
    if (cell < 0.0) throw InvalidArgument("voxel size must be non-negative");
  } else if (!cameras.empty()) {
    cell = std::numeric_limits<double>::infinity();
    for (const auto& cam : cameras) {
      cell = std::min(cell, 0.5 * (cam.depth_max - cam.depth_min) / (std::max(options.hypotheses, 2) - 1));
    }
  }
  if (cell > 0.0 && !cloud.empty()) return voxel_merge(cloud, cell);
  return cloud;
}

double point_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::sqrt((a - b).squaredNorm());
}

namespace {

constexpr std::size_t kLeafSize = 8;

}  // namespace

KdTree::KdTree(std::vector<Eigen::Vector3d> points) : points_(std::move(points)) {
  for (const auto& p : points_) {
    if (!p.allFinite()) throw InvalidArgument("point cloud has non-finite coordinates");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) build(0, points_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, 0.0});
  if (end - begin <= kLeafSize) return id;

  Eigen::Vector3d lo = points_[order_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<long>(begin), order_.begin() + static_cast<long>(mid),
                   order_.begin() + static_cast<long>(end),
                   [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Eigen::Vector3d& q, std::size_t& best, double& best_d2) const {
  const Node& nd = nodes_[node];
  if (nd.axis < 0) {
    for (std::size_t i = nd.begin; i < nd.end; ++i) {
      const std::size_t idx = order_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = q[nd.axis] - nd.split;
  const int near = diff <= 0.0 ? nd.left : nd.right;
  const int far = diff <= 0.0 ? nd.right : nd.left;
  search(near, q, best, best_d2);
  // <= keeps equal-distance candidates reachable for the index tie-break.
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

KdTree::Hit KdTree::nearest(const Eigen::Vector3d& query) const {
  if (points_.empty()) throw EmptySupport("nearest-neighbor query on an empty cloud");
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, query, best, best_d2);
  return {best, point_distance(points_[best], query)};
}

namespace {

std::vector<double> nn_distances(const PointCloud& from, const KdTree& to) {
  std::vector<double> d(from.points.size());
  for (std::size_t i = 0; i < from.points.size(); ++i) d[i] = to.nearest(from.points[i]).distance;
  return d;
}

}  // namespace

DtuMetrics dtu_metrics(const PointCloud& recon, const PointCloud& gt, double max_dist) {
  if (recon.empty() || gt.empty()) throw EmptySupport("dtu metrics need two non-empty clouds");
  if (!(max_dist > 0.0)) throw InvalidArgument("max_dist must be positive");
  const KdTree gt_tree(gt.points);
  const KdTree recon_tree(recon.points);
  auto capped_mean = [&](std::vector<double> d) {
    for (double& v : d) v = std::min(v, max_dist);
    return exact_sum(d) / static_cast<double>(d.size());
  };
  DtuMetrics m;
  m.accuracy = capped_mean(nn_distances(recon, gt_tree));
  m.completeness = capped_mean(nn_distances(gt, recon_tree));
  m.overall = 0.5 * (m.accuracy + m.completeness);
  return m;
}

FScore f_score(const PointCloud& recon, const PointCloud& gt, double threshold) {
  if (recon.empty() || gt.empty()) throw EmptySupport("f-score needs two non-empty clouds");
  if (!(threshold > 0.0)) throw InvalidArgument("threshold must be positive");
  auto fraction = [&](const PointCloud& from, const KdTree& to) {
    std::size_t hits = 0;
    for (const auto& p : from.points) hits += to.nearest(p).distance < threshold ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(from.points.size());
  };
  FScore s;
  s.precision = fraction(recon, KdTree(gt.points));
  s.recall = fraction(gt, KdTree(recon.points));
  s.f = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace uamvs
