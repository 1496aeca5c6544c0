#include "uamvs/grid.hpp"

#include <cmath>

namespace uamvs {

DepthMap DepthMap::from_grid(Grid<double> values) {
  DepthMap out;
  out.valid = Mask(values.width(), values.height(), 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i];
    out.valid[i] = std::isfinite(d) && d > 0.0;
  }
  out.depth = std::move(values);
  return out;
}

DepthMap DepthMap::from_raster(const Raster& raster) {
  if (raster.channels() != 1) {
    throw InvalidArgument("depth raster must have exactly one channel");
  }
  return from_grid(raster_to_grid(raster));
}

Raster DepthMap::to_raster() const {
  Raster out(width(), height(), 1);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    out.samples()[i] = valid[i] ? depth[i] : 0.0;
  }
  return out;
}

Raster grid_to_raster(const Grid<double>& grid) {
  Raster out(grid.width(), grid.height(), 1);
  out.samples() = grid.data();
  return out;
}

Grid<double> raster_to_grid(const Raster& raster, int channel) {
  if (channel < 0 || channel >= raster.channels()) {
    throw InvalidArgument("channel index out of range");
  }
  Grid<double> out(raster.width(), raster.height());
  for (int y = 0; y < raster.height(); ++y) {
    for (int x = 0; x < raster.width(); ++x) out(x, y) = raster.at(x, y, channel);
  }
  return out;
}

Raster mask_to_raster(const Mask& mask) {
  Raster out(mask.width(), mask.height(), 1);
  for (std::size_t i = 0; i < mask.size(); ++i) out.samples()[i] = mask[i] ? 1.0 : 0.0;
  return out;
}

Raster flow_to_raster(const FlowField& flow) {
  Raster out(flow.width(), flow.height(), 2);
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      out.at(x, y, 0) = flow(x, y).x();
      out.at(x, y, 1) = flow(x, y).y();
    }
  }
  return out;
}

FlowField raster_to_flow(const Raster& raster) {
  if (raster.channels() != 2) {
    throw InvalidArgument("flow raster must have exactly two channels");
  }
  FlowField out = zero_flow(raster.width(), raster.height());
  for (int y = 0; y < raster.height(); ++y) {
    for (int x = 0; x < raster.width(); ++x) {
      out(x, y) = Eigen::Vector2d(raster.at(x, y, 0), raster.at(x, y, 1));
    }
  }
  return out;
}

Raster to_gray(const Raster& image) {
  if (image.channels() == 1) return image;
  Raster out(image.width(), image.height(), 1);
  const int c = image.channels();
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += image.samples()[i * c + k];
    out.samples()[i] = s / c;
  }
  return out;
}

}  // namespace uamvs
