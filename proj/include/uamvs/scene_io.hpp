#pragma once

// Readers and writers for the MVSNet-style dataset formats: cam.txt,
// pair.txt, PFM, Middlebury .flo, PLY and binary PPM/PGM.
//
// All readers take the full file contents and either return a value or throw
// ParseError. None of them trust sizes found in headers before checking them
// against the payload length.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "uamvs/grid.hpp"

namespace uamvs {

using Bytes = std::string;

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

struct CameraFile {
  Eigen::Matrix4d extrinsic = Eigen::Matrix4d::Identity();  // world -> camera
  Eigen::Matrix3d intrinsic = Eigen::Matrix3d::Identity();  // pixels
  double depth_min = 0.0;
  double depth_interval = 0.0;
  std::optional<int> depth_count;
  std::optional<double> depth_max;

  bool operator==(const CameraFile&) const = default;
};

CameraFile parse_camera(std::string_view text);
std::string serialize_camera(const CameraFile& cam);

struct ViewNeighbor {
  int id = 0;
  double score = 0.0;
  bool operator==(const ViewNeighbor&) const = default;
};

struct ViewGraph {
  int num_views = 0;
  std::vector<std::vector<ViewNeighbor>> neighbors;  // indexed by reference id

  bool operator==(const ViewGraph&) const = default;
};

ViewGraph parse_pairs(std::string_view text);
std::string serialize_pairs(const ViewGraph& graph);

// Scale magnitude as found in the header; writes always emit -1.0.
struct PfmImage {
  Raster raster;
  double scale = -1.0;
};

PfmImage read_pfm(std::string_view bytes);
Bytes write_pfm(const Raster& raster);

Raster read_flo(std::string_view bytes);
Bytes write_flo(const Raster& flow);

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<std::array<std::uint8_t, 3>> colors;  // empty or one per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_colors() const { return !colors.empty(); }
};

enum class PlyFormat { kAscii, kBinaryLittleEndian };

PointCloud read_ply(std::string_view bytes);
Bytes write_ply(const PointCloud& cloud, PlyFormat format = PlyFormat::kBinaryLittleEndian);

enum class MaxvalPolicy { kReject, kRescale };

// P5 (1 channel) and P6 (3 channels); samples are mapped to [0, 1].
Raster read_image(std::string_view bytes, MaxvalPolicy policy = MaxvalPolicy::kReject);
Bytes write_image(const Raster& image);

}  // namespace uamvs
