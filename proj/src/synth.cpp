#include "uamvs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <Eigen/Dense>

#include "uamvs/seed.hpp"

namespace uamvs {

namespace {

constexpr double kMinRayT = 1e-9;

double lattice(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = mix64(seed ^ static_cast<std::uint64_t>(x));
  h = mix64(h ^ static_cast<std::uint64_t>(y));
  h = mix64(h ^ static_cast<std::uint64_t>(z));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double value_noise(const Eigen::Vector3d& p, std::uint64_t seed) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const auto iz = static_cast<std::int64_t>(fz);
  const double tx = fade(p.x() - fx), ty = fade(p.y() - fy), tz = fade(p.z() - fz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
        acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
      }
    }
  }
  return acc;
}

}  // namespace

Eigen::Vector3d Texture::albedo(const Eigen::Vector3d& p) const {
  if (has_band) {
    const double s = p.dot(band_axis);
    if (s >= band_min && s <= band_max) return band_color;
  }
  switch (kind) {
    case Kind::kConstant:
      return color_a;
    case Kind::kChecker: {
      const Eigen::Vector3d q = p / scale;
      const auto parity = static_cast<std::int64_t>(std::floor(q.x())) + static_cast<std::int64_t>(std::floor(q.y())) +
                          static_cast<std::int64_t>(std::floor(q.z()));
      return (parity & 1) ? color_b : color_a;
    }
    case Kind::kNoise: {
      double n = 0.0, amp = 1.0, norm = 0.0, freq = 1.0 / scale;
      for (int o = 0; o < std::max(octaves, 1); ++o) {
        n += amp * value_noise(p * freq, derive_seed(seed, 0x7478, static_cast<std::uint64_t>(o)));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
      }
      n /= norm;
      // Stretch the noise histogram (which clusters around 0.5) for contrast.
      n = std::clamp(0.5 + 1.8 * (n - 0.5), 0.0, 1.0);
      return color_b + n * (color_a - color_b);
    }
  }
  return color_a;
}

std::optional<RayHit> cast_ray(const SceneSpec& spec, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
    const Primitive& prim = spec.primitives[i];
    double t = -1.0;
    if (prim.kind == Primitive::Kind::kPlane) {
      const double denom = prim.normal.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      t = prim.normal.dot(prim.center - origin) / denom;
      if (!(t > kMinRayT)) continue;
      if (prim.half_extent) {
        const Eigen::Vector3d local = origin + t * dir - prim.center;
        if (std::abs(local.dot(prim.axis_u)) > prim.half_extent->x() ||
            std::abs(local.dot(prim.axis_v)) > prim.half_extent->y()) {
          continue;
        }
      }
    } else {
      const Eigen::Vector3d oc = origin - prim.center;
      const double a = dir.squaredNorm();
      const double b = 2.0 * dir.dot(oc);
      const double c = oc.squaredNorm() - prim.radius * prim.radius;
      const double disc = b * b - 4.0 * a * c;
      if (disc < 0.0) continue;
      const double sq = std::sqrt(disc);
      // Numerically stable roots.
      const double q = -0.5 * (b + std::copysign(sq, b));
      double t0 = q / a, t1 = c / q;
      if (t0 > t1) std::swap(t0, t1);
      t = t0 > kMinRayT ? t0 : t1;
      if (!(t > kMinRayT)) continue;
    }
    if (!best || t < best->t) {
      RayHit hit;
      hit.t = t;
      hit.primitive = static_cast<int>(i);
      hit.point = origin + t * dir;
      hit.normal = prim.kind == Primitive::Kind::kPlane ? prim.normal : (hit.point - prim.center).normalized();
      if (hit.normal.dot(dir) > 0.0) hit.normal = -hit.normal;
      best = hit;
    }
  }
  return best;
}

namespace {

Eigen::Vector3d pixel_ray(const Camera& cam, double x, double y) {
  const Eigen::Vector3d ray = cam.K.triangularView<Eigen::Upper>().solve(Eigen::Vector3d(x, y, 1.0));
  return cam.R.transpose() * ray;  // camera-frame z component is 1
}

Eigen::Vector3d shade(const SceneSpec& spec, const RayHit& hit, const Eigen::Vector3d& view_dir) {
  const Eigen::Vector3d albedo = spec.primitives[hit.primitive].texture.albedo(hit.point);
  const Eigen::Vector3d to_light = -spec.light_dir.normalized();
  const double lambert = std::max(0.0, hit.normal.dot(to_light));
  Eigen::Vector3d color = albedo * (spec.ambient + spec.diffuse * lambert);
  if (spec.specular) {
    const Eigen::Vector3d reflected = spec.light_dir.normalized() - 2.0 * spec.light_dir.normalized().dot(hit.normal) * hit.normal;
    const double s = std::max(0.0, reflected.dot(-view_dir.normalized()));
    color += Eigen::Vector3d::Constant(0.6 * std::pow(s, 12.0));
  }
  return color.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace

std::vector<RenderedView> render(const SceneSpec& spec) {
  if (spec.width < 2 || spec.height < 2) throw InvalidArgument("render needs an image of at least 2x2");
  if (spec.cameras.empty()) throw InvalidArgument("scene has no cameras");
  std::vector<RenderedView> out;
  for (std::size_t v = 0; v < spec.cameras.size(); ++v) {
    const Camera& cam = spec.cameras[v];
    cam.validate();
    const Eigen::Vector3d origin = cam.center();
    for (const auto& prim : spec.primitives) {
      if (prim.kind == Primitive::Kind::kSphere && (origin - prim.center).norm() <= prim.radius) {
        throw InvalidArgument("camera " + std::to_string(v) + " is inside a sphere");
      }
    }
    RenderedView rv{Raster(spec.width, spec.height, 3), DepthMap(spec.width, spec.height),
                    Grid<Eigen::Vector3d>(spec.width, spec.height, Eigen::Vector3d::Zero()),
                    Grid<int>(spec.width, spec.height, -1)};
    bool any = false;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const Eigen::Vector3d dir = pixel_ray(cam, x, y);
        const auto hit = cast_ray(spec, origin, dir);
        if (!hit) continue;
        any = true;
        rv.depth.depth(x, y) = hit->t;
        rv.depth.valid(x, y) = 1;
        rv.points(x, y) = hit->point;
        rv.primitive(x, y) = hit->primitive;
        const Eigen::Vector3d color = shade(spec, *hit, dir);
        for (int c = 0; c < 3; ++c) rv.image.at(x, y, c) = color[c];
      }
    }
    if (!any) throw InvalidArgument("camera " + std::to_string(v) + " sees no geometry");
    out.push_back(std::move(rv));
  }
  return out;
}

GroundTruthFlow gt_flow(const SceneSpec& spec, const std::vector<RenderedView>& views, int view_a, int view_b) {
  const int n = static_cast<int>(views.size());
  if (view_a < 0 || view_b < 0 || view_a >= n || view_b >= n) throw InvalidArgument("view index out of range");

  auto one_way = [&](int from, int to, FlowField& flow, Mask& occluded) {
    const RenderedView& src = views[from];
    const Camera& cam = spec.cameras[to];
    const Eigen::Vector3d origin = cam.center();
    const int w = src.depth.width();
    const int h = src.depth.height();
    flow = zero_flow(w, h);
    occluded = Mask(w, h, 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!src.depth.is_valid(x, y)) continue;
        const Eigen::Vector3d xc = cam.R * src.points(x, y) + cam.t;
        if (xc.z() <= kMinProjectedDepth) continue;
        const Eigen::Vector3d q = cam.K * xc;
        const Eigen::Vector2d pb(q.x() / q.z(), q.y() / q.z());
        flow(x, y) = pb - Eigen::Vector2d(x, y);
        if (!(pb.x() >= 0.0 && pb.y() >= 0.0 && pb.x() <= spec.width - 1 && pb.y() <= spec.height - 1)) continue;
        const auto hit = cast_ray(spec, origin, pixel_ray(cam, pb.x(), pb.y()));
        occluded(x, y) = !(hit && xc.z() <= hit->t + 1e-4 * xc.z());
      }
    }
  };

  GroundTruthFlow out;
  one_way(view_a, view_b, out.forward, out.occluded_forward);
  one_way(view_b, view_a, out.backward, out.occluded_backward);
  return out;
}

PointCloud gt_point_cloud(const std::vector<RenderedView>& views) {
  PointCloud cloud;
  for (const auto& v : views) {
    for (int y = 0; y < v.depth.height(); ++y) {
      for (int x = 0; x < v.depth.width(); ++x) {
        if (!v.depth.is_valid(x, y)) continue;
        cloud.points.push_back(v.points(x, y));
        std::array<std::uint8_t, 3> rgb{};
        for (int c = 0; c < 3; ++c) {
          rgb[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v.image.at(x, y, c), 0.0, 1.0) * 255.0));
        }
        cloud.colors.push_back(rgb);
      }
    }
  }
  return cloud;
}

namespace {

Eigen::Matrix3d default_intrinsics(int width, int height) {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = K(1, 1) = static_cast<double>(width);
  K(0, 2) = 0.5 * (width - 1);
  K(1, 2) = 0.5 * (height - 1);
  return K;
}

Texture noise_texture(std::uint64_t seed, double scale, Eigen::Vector3d a, Eigen::Vector3d b) {
  Texture t;
  t.kind = Texture::Kind::kNoise;
  t.seed = seed;
  t.scale = scale;
  t.octaves = 3;
  t.color_a = a;
  t.color_b = b;
  return t;
}

Primitive plane(const Eigen::Vector3d& center, const Eigen::Vector3d& normal, Texture texture,
                std::optional<Eigen::Vector2d> half_extent = std::nullopt) {
  Primitive p;
  p.kind = Primitive::Kind::kPlane;
  p.center = center;
  p.normal = normal.normalized();
  // In-plane axes: project world x, then complete the frame.
  Eigen::Vector3d u = Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitX().dot(p.normal) * p.normal;
  p.axis_u = u.normalized();
  p.axis_v = p.normal.cross(p.axis_u).normalized();
  p.half_extent = half_extent;
  p.texture = std::move(texture);
  return p;
}

}  // namespace

SceneSpec acceptance_scene(int width, int height, int views, std::uint64_t seed, bool textureless_strip) {
  if (views < 2) throw InvalidArgument("acceptance scene needs at least two views");
  SceneSpec spec;
  spec.width = width;
  spec.height = height;
  spec.seed = seed;

  const double depth_min = 10.0, depth_max = 25.0;
  const Eigen::Matrix3d K = default_intrinsics(width, height);
  const Eigen::Vector3d target(0.0, 0.0, 15.0);
  const Eigen::Vector3d up(0.0, -1.0, 0.0);
  const double baseline = 4.0;
  spec.cameras.push_back(Camera::look_at(K, Eigen::Vector3d::Zero(), target, up, depth_min, depth_max));
  for (int i = 1; i < views; ++i) {
    const double angle = 2.0 * std::numbers::pi * (i - 1) / (views - 1);
    const Eigen::Vector3d eye(baseline * std::cos(angle), baseline * std::sin(angle), 0.0);
    spec.cameras.push_back(Camera::look_at(K, eye, target, up, depth_min, depth_max));
  }

  const Eigen::Vector3d n = Eigen::Vector3d(0.1, -0.12, -1.0).normalized();
  const Eigen::Vector3d c(0.0, 0.0, 17.0);
  Texture ground = noise_texture(derive_seed(seed, 1), 0.9, {0.95, 0.85, 0.7}, {0.1, 0.15, 0.25});
  if (textureless_strip) {
    ground.has_band = true;
    ground.band_axis = Eigen::Vector3d::UnitY();
    ground.band_min = -100.0;
    ground.band_max = -4.0;
  }
  spec.primitives.push_back(plane(c, n, ground));

  // Caps: centers behind the plane so each sphere meets it in a crease and
  // the depth stays continuous.
  auto cap = [&](const Eigen::Vector3d& foot, double radius, double sink, Texture tex) {
    Primitive p;
    p.kind = Primitive::Kind::kSphere;
    const Eigen::Vector3d on_plane = foot - (foot - c).dot(n) * n;
    p.center = on_plane - sink * radius * n;
    p.radius = radius;
    p.texture = std::move(tex);
    return p;
  };
  spec.primitives.push_back(cap({-1.8, 1.2, 17.0}, 4.5, 0.85,
                                noise_texture(derive_seed(seed, 2), 0.45, {0.9, 0.9, 0.95}, {0.2, 0.1, 0.1})));
  spec.primitives.push_back(cap({2.6, -0.6, 17.0}, 3.5, 0.85,
                                noise_texture(derive_seed(seed, 3), 0.35, {0.85, 0.95, 0.8}, {0.15, 0.2, 0.1})));
  return spec;
}

SceneSpec occlusion_scene(int width, int height, std::uint64_t seed) {
  SceneSpec spec;
  spec.width = width;
  spec.height = height;
  spec.seed = seed;
  const Eigen::Matrix3d K = default_intrinsics(width, height);
  const Eigen::Vector3d up(0.0, -1.0, 0.0);
  for (double x : {0.0, 1.5}) {
    const Eigen::Vector3d eye(x, 0.0, 0.0);
    spec.cameras.push_back(Camera::look_at(K, eye, eye + Eigen::Vector3d::UnitZ(), up, 8.0, 24.0));
  }
  spec.primitives.push_back(plane({0.0, 0.0, 20.0}, {0.0, 0.0, -1.0},
                                  noise_texture(derive_seed(seed, 1), 0.8, {0.9, 0.8, 0.7}, {0.1, 0.2, 0.3})));
  spec.primitives.push_back(plane({0.3, 0.0, 12.0}, {0.0, 0.0, -1.0},
                                  noise_texture(derive_seed(seed, 2), 0.4, {0.8, 0.9, 0.9}, {0.3, 0.1, 0.1}),
                                  Eigen::Vector2d(2.0, 2.5)));
  return spec;
}

ViewGraph default_view_graph(const SceneSpec& spec) {
  ViewGraph g;
  g.num_views = static_cast<int>(spec.cameras.size());
  g.neighbors.resize(spec.cameras.size());
  for (int v = 0; v < g.num_views; ++v) {
    for (int u = 0; u < g.num_views; ++u) {
      if (u == v) continue;
      const double dist = (spec.cameras[u].center() - spec.cameras[v].center()).norm();
      g.neighbors[v].push_back({u, 1.0 / (1.0 + dist)});
    }
    std::stable_sort(g.neighbors[v].begin(), g.neighbors[v].end(),
                     [](const ViewNeighbor& a, const ViewNeighbor& b) { return a.score > b.score; });
  }
  return g;
}

namespace {

std::string view_name(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08d", v);
  return buf;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const SceneSpec& spec, const std::vector<RenderedView>& views) {
  namespace fs = std::filesystem;
  const ViewGraph graph = default_view_graph(spec);
  for (int v = 0; v < static_cast<int>(views.size()); ++v) {
    const std::string name = view_name(v);
    write_file(dir / "images" / (name + ".ppm"), write_image(views[v].image));
    write_file(dir / "depths" / (name + ".pfm"), write_pfm(views[v].depth.to_raster()));
    write_file(dir / "cams" / (name + "_cam.txt"), serialize_camera(spec.cameras[v].to_file(spec.hypotheses)));
    for (const auto& nb : graph.neighbors[v]) {
      const auto flow = gt_flow(spec, views, v, nb.id);
      const std::string pair = name + "_" + view_name(nb.id);
      write_file(dir / "flows" / (pair + ".flo"), write_flo(flow_to_raster(flow.forward)));
      write_file(dir / "flows" / (pair + "_occ.pfm"), write_pfm(mask_to_raster(flow.occluded_forward)));
    }
  }
  write_file(dir / "pair.txt", serialize_pairs(graph));
  write_file(dir / "gt.ply", write_ply(gt_point_cloud(views)));
}

}  // namespace uamvs
