#include "uamvs/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace uamvs {

void Camera::validate() const {
  if (!K.allFinite() || !R.allFinite() || !t.allFinite()) {
    throw InvalidArgument("camera parameters must be finite");
  }
  const double orthogonality = (R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (orthogonality > 1e-6 || std::abs(R.determinant() - 1.0) > 1e-6) {
    throw InvalidArgument("camera rotation is not orthonormal with det +1");
  }
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(2, 2) != 1.0) {
    throw InvalidArgument("intrinsic matrix must be upper triangular with K[2][2] = 1");
  }
  if (K(0, 0) == 0.0 || K(1, 1) == 0.0) throw InvalidArgument("intrinsic focal length is zero");
  if (!(depth_min > 0.0 && depth_min < depth_max)) {
    throw InvalidArgument("camera depth range must satisfy 0 < min < max");
  }
}

Eigen::Vector3d Camera::backproject(const Eigen::Vector2d& pixel, double depth) const {
  const Eigen::Vector3d ray = K.triangularView<Eigen::Upper>().solve(Eigen::Vector3d(pixel.x(), pixel.y(), 1.0));
  return R.transpose() * (depth * ray - t);
}

Camera Camera::from_file(const CameraFile& file, int default_count) {
  Camera cam;
  cam.K = file.intrinsic;
  cam.R = file.extrinsic.topLeftCorner<3, 3>();
  cam.t = file.extrinsic.topRightCorner<3, 1>();
  cam.depth_min = file.depth_min;
  if (file.depth_max) {
    cam.depth_max = *file.depth_max;
  } else {
    const int n = file.depth_count.value_or(default_count);
    cam.depth_max = file.depth_min + file.depth_interval * (std::max(n, 2) - 1);
  }
  cam.validate();
  return cam;
}

CameraFile Camera::to_file(int hypotheses) const {
  CameraFile f;
  f.extrinsic.setIdentity();
  f.extrinsic.topLeftCorner<3, 3>() = R;
  f.extrinsic.topRightCorner<3, 1>() = t;
  f.intrinsic = K;
  f.depth_min = depth_min;
  f.depth_interval = (depth_max - depth_min) / (std::max(hypotheses, 2) - 1);
  f.depth_count = hypotheses;
  f.depth_max = depth_max;
  return f;
}

Camera Camera::look_at(const Eigen::Matrix3d& K, const Eigen::Vector3d& eye,
                       const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       double depth_min, double depth_max) {
  const Eigen::Vector3d z = (target - eye).normalized();
  const Eigen::Vector3d y = -(up - up.dot(z) * z).normalized();
  const Eigen::Vector3d x = y.cross(z);
  Camera cam;
  cam.K = K;
  cam.R.row(0) = x.transpose();
  cam.R.row(1) = y.transpose();
  cam.R.row(2) = z.transpose();
  cam.t = -cam.R * eye;
  cam.depth_min = depth_min;
  cam.depth_max = depth_max;
  cam.validate();
  return cam;
}

ViewTransfer::ViewTransfer(const Camera& ref, const Camera& src) {
  const Eigen::Matrix3d rel_R = src.R * ref.R.transpose();
  M_ = src.K * rel_R * ref.K.inverse();
  c_ = src.K * (src.t - rel_R * ref.t);
}

ViewTransfer::Result ViewTransfer::apply(const Eigen::Vector2d& pixel, double depth) const {
  const Eigen::Vector3d m = M_ * Eigen::Vector3d(pixel.x(), pixel.y(), 1.0);
  const Eigen::Vector3d q = depth * m + c_;
  Result r;
  r.depth = q.z();
  r.valid = q.z() > kMinProjectedDepth;
  const double inv = 1.0 / q.z();
  r.pixel = Eigen::Vector2d(q.x() * inv, q.y() * inv);
  // d(q_i / q_z)/d(depth) = (m_i q_z - q_i m_z) / q_z^2
  r.d_pixel = Eigen::Vector2d((m.x() - r.pixel.x() * m.z()) * inv, (m.y() - r.pixel.y() * m.z()) * inv);
  return r;
}

Reprojection reproject_point(const Eigen::Vector2d& pixel, double depth, const Camera& ref,
                             const Camera& src) {
  if (!(depth > 0.0)) throw InvalidArgument("reprojection depth must be positive");
  const auto r = ViewTransfer(ref, src).apply(pixel, depth);
  return {r.pixel, r.depth, r.valid};
}

WarpField warp_field(const DepthMap& depth, const Camera& ref, const Camera& src, int src_width,
                     int src_height) {
  const int w = depth.width();
  const int h = depth.height();
  if (src_width < 0) src_width = w;
  if (src_height < 0) src_height = h;
  const ViewTransfer transfer(ref, src);

  WarpField out{Grid<Eigen::Vector2d>(w, h, Eigen::Vector2d::Zero()),
                Grid<Eigen::Vector2d>(w, h, Eigen::Vector2d::Zero()), Grid<double>(w, h, 0.0),
                Mask(w, h, 0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!depth.is_valid(x, y)) continue;
      const auto r = transfer.apply(Eigen::Vector2d(x, y), depth.depth(x, y));
      out.coords(x, y) = r.pixel;
      out.jacobian(x, y) = r.d_pixel;
      out.source_depth(x, y) = r.depth;
      out.valid(x, y) = r.valid && r.pixel.x() >= 0.0 && r.pixel.y() >= 0.0 &&
                        r.pixel.x() <= src_width - 1 && r.pixel.y() <= src_height - 1;
      if (!r.valid) {
        out.coords(x, y) = Eigen::Vector2d(x, y);
        out.jacobian(x, y).setZero();
      }
    }
  }
  return out;
}

VirtualFlow depth_to_flow(const DepthMap& depth, const Camera& ref, const Camera& src, int src_width,
                          int src_height) {
  WarpField warp = warp_field(depth, ref, src, src_width, src_height);
  VirtualFlow out{zero_flow(depth.width(), depth.height()), std::move(warp.jacobian),
                  std::move(warp.valid)};
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      if (depth.is_valid(x, y)) out.flow(x, y) = warp.coords(x, y) - Eigen::Vector2d(x, y);
    }
  }
  return out;
}

namespace {

struct Cell {
  int x0, y0, x1, y1;
  double fx, fy;
};

bool locate(int width, int height, double x, double y, Cell& cell) {
  if (!(x >= 0.0 && y >= 0.0 && x <= width - 1 && y <= height - 1)) return false;
  cell.x0 = std::min(static_cast<int>(std::floor(x)), std::max(width - 2, 0));
  cell.y0 = std::min(static_cast<int>(std::floor(y)), std::max(height - 2, 0));
  cell.x1 = std::min(cell.x0 + 1, width - 1);
  cell.y1 = std::min(cell.y0 + 1, height - 1);
  cell.fx = x - cell.x0;
  cell.fy = y - cell.y0;
  return true;
}

}  // namespace

BilinearSample sample_bilinear(const Raster& image, double x, double y, int channel) {
  BilinearSample s;
  Cell c;
  if (!locate(image.width(), image.height(), x, y, c)) return s;
  const double v00 = image.at(c.x0, c.y0, channel);
  const double v10 = image.at(c.x1, c.y0, channel);
  const double v01 = image.at(c.x0, c.y1, channel);
  const double v11 = image.at(c.x1, c.y1, channel);
  const double top = v00 + c.fx * (v10 - v00);
  const double bottom = v01 + c.fx * (v11 - v01);
  s.value = top + c.fy * (bottom - top);
  s.dx = (1.0 - c.fy) * (v10 - v00) + c.fy * (v11 - v01);
  s.dy = bottom - top;
  s.inside = true;
  return s;
}

Eigen::Vector2d sample_flow(const FlowField& flow, double x, double y, bool* inside) {
  Cell c;
  const bool ok = locate(flow.width(), flow.height(), x, y, c);
  if (inside) *inside = ok;
  if (!ok) return Eigen::Vector2d::Zero();
  const Eigen::Vector2d top = flow(c.x0, c.y0) + c.fx * (flow(c.x1, c.y0) - flow(c.x0, c.y0));
  const Eigen::Vector2d bottom = flow(c.x0, c.y1) + c.fx * (flow(c.x1, c.y1) - flow(c.x0, c.y1));
  return top + c.fy * (bottom - top);
}

SampledImage bilinear_sample(const Raster& image, const Grid<Eigen::Vector2d>& coords) {
  const int w = coords.width();
  const int h = coords.height();
  const int ch = image.channels();
  SampledImage out{Raster(w, h, ch), Raster(w, h, ch), Raster(w, h, ch), Mask(w, h, 0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector2d& p = coords(x, y);
      for (int c = 0; c < ch; ++c) {
        const auto s = sample_bilinear(image, p.x(), p.y(), c);
        if (!s.inside) break;
        out.values.at(x, y, c) = s.value;
        out.dx.at(x, y, c) = s.dx;
        out.dy.at(x, y, c) = s.dy;
        out.inbounds(x, y) = 1;
      }
    }
  }
  return out;
}

std::pair<Raster, Raster> image_gradient(const Raster& image) {
  const int w = image.width();
  const int h = image.height();
  if (w < 2 || h < 2) throw InvalidArgument("image gradient needs width and height >= 2");
  const int ch = image.channels();
  Raster gx(w, h, ch), gy(w, h, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        const double v = image.at(x, y, c);
        gx.at(x, y, c) = x + 1 < w ? image.at(x + 1, y, c) - v : 0.0;
        gy.at(x, y, c) = y + 1 < h ? image.at(x, y + 1, c) - v : 0.0;
      }
    }
  }
  return {std::move(gx), std::move(gy)};
}

}  // namespace uamvs
