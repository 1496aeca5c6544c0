#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "uamvs/error.hpp"

namespace uamvs {

// Dense row-major 2D grid with top-left origin.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, const T& fill = T{})
      : width_(width), height_(height) {
    if (width < 0 || height < 0) {
      throw InvalidArgument("grid dimensions must be non-negative");
    }
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  T& operator()(int x, int y) {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  const T& operator()(int x, int y) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  bool operator==(const Grid& other) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Mask = Grid<std::uint8_t>;
using FlowField = Grid<Eigen::Vector2d>;

inline std::size_t count(const Mask& mask) {
  std::size_t n = 0;
  for (auto v : mask.data()) n += v ? 1 : 0;
  return n;
}

inline FlowField zero_flow(int width, int height) {
  return FlowField(width, height, Eigen::Vector2d::Zero());
}

// Interleaved multi-channel samples (images, PFM payloads, flow files).
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, int channels, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels < 1) {
      throw InvalidArgument("raster dimensions must be non-negative with >= 1 channel");
    }
    samples_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  double& at(int x, int y, int c) {
    return samples_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  double at(int x, int y, int c) const {
    return samples_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::vector<double>& samples() { return samples_; }
  const std::vector<double>& samples() const { return samples_; }

  bool same_shape(const Raster& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  bool operator==(const Raster& other) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<double> samples_;
};

// Per-pixel depth with a validity mask; valid entries are finite and > 0.
struct DepthMap {
  Grid<double> depth;
  Mask valid;

  DepthMap() = default;
  DepthMap(int width, int height, double fill = 0.0)
      : depth(width, height, fill), valid(width, height, 0) {}

  int width() const { return depth.width(); }
  int height() const { return depth.height(); }
  bool is_valid(int x, int y) const { return valid(x, y) != 0; }

  // Marks every finite, strictly positive entry valid.
  static DepthMap from_grid(Grid<double> values);
  static DepthMap from_raster(const Raster& raster);
  Raster to_raster() const;  // invalid pixels are written as 0
};

Raster grid_to_raster(const Grid<double>& grid);
Grid<double> raster_to_grid(const Raster& raster, int channel = 0);
Raster mask_to_raster(const Mask& mask);
Raster flow_to_raster(const FlowField& flow);
FlowField raster_to_flow(const Raster& raster);
Raster to_gray(const Raster& image);

}  // namespace uamvs
