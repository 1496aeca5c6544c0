#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Geometry>

#include "uamvs/geometry.hpp"
#include "uamvs/grid.hpp"

namespace uamvs::testing {

inline Eigen::Matrix3d intrinsic(double f, int width, int height) {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = f;
  K(1, 1) = f;
  K(0, 2) = 0.5 * (width - 1);
  K(1, 2) = 0.5 * (height - 1);
  return K;
}

// Camera at `center` with a small random rotation about a random axis.
inline Camera random_camera(std::mt19937_64& rng, const Eigen::Matrix3d& K, const Eigen::Vector3d& center,
                            double max_angle) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-max_angle, max_angle);
  const Eigen::Vector3d axis = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
  Camera cam;
  cam.K = K;
  cam.R = Eigen::AngleAxisd(u(rng), axis).toRotationMatrix();
  cam.t = -cam.R * center;
  cam.depth_min = 1.0;
  cam.depth_max = 10.0;
  return cam;
}

// Sum of random sinusoids; smooth with non-zero gradient almost everywhere.
inline Raster smooth_image(std::mt19937_64& rng, int width, int height, int channels) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Raster img(width, height, channels);
  for (int c = 0; c < channels; ++c) {
    double fx[3], fy[3], ph[3], amp[3];
    for (int k = 0; k < 3; ++k) {
      fx[k] = 0.2 + 0.8 * u(rng);
      fy[k] = 0.2 + 0.8 * u(rng);
      ph[k] = 6.28 * u(rng);
      amp[k] = 0.1 + 0.1 * u(rng);
    }
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double v = 0.5;
        for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
        img.at(x, y, c) = v;
      }
    }
  }
  return img;
}

inline Raster random_raster(std::mt19937_64& rng, int width, int height, int channels, double lo = 0.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Raster r(width, height, channels);
  for (auto& s : r.samples()) s = u(rng);
  return r;
}

inline Grid<double> random_grid(std::mt19937_64& rng, int width, int height, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Grid<double> g(width, height);
  for (auto& v : g.data()) v = u(rng);
  return g;
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("uamvs_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace uamvs::testing
