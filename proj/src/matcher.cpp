#include "uamvs/matcher.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "uamvs/seed.hpp"

namespace uamvs {

namespace {

constexpr int kPatchRadius = 2;
constexpr int kPatchSize = (2 * kPatchRadius + 1) * (2 * kPatchRadius + 1);
constexpr int kDescriptorSize = 3 * kPatchSize;

// Image resampled onto the reference grid, with the per-pixel quantities the
// patch descriptor needs.
struct PatchSource {
  int width = 0;
  int height = 0;
  std::vector<double> value;
  std::vector<double> gx;
  std::vector<double> gy;
  std::vector<double> patch_mean;
  std::vector<std::uint8_t> patch_valid;
};

// `defined` marks positions with a sample (possibly border-padded); a patch
// takes part when every position is defined and its center is `inside`.
void prepare_patches(PatchSource& s, const std::vector<std::uint8_t>& defined,
                     const std::vector<std::uint8_t>& inside) {
  const int w = s.width;
  const int h = s.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  s.gx.assign(n, 0.0);
  s.gy.assign(n, 0.0);
  s.patch_mean.assign(n, 0.0);
  s.patch_valid.assign(n, 0);
  // A position is usable when it and its forward neighbors are valid.
  std::vector<std::uint8_t> usable(n, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const std::size_t ix = x + 1 < w ? i + 1 : i;
      const std::size_t iy = y + 1 < h ? i + w : i;
      s.gx[i] = s.value[ix] - s.value[i];
      s.gy[i] = s.value[iy] - s.value[i];
      usable[i] = defined[i] && defined[ix] && defined[iy];
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      bool ok = true;
      for (int oy = -kPatchRadius; oy <= kPatchRadius; ++oy) {
        const int yy = std::clamp(y + oy, 0, h - 1);
        for (int ox = -kPatchRadius; ox <= kPatchRadius; ++ox) {
          const std::size_t q = static_cast<std::size_t>(yy) * w + std::clamp(x + ox, 0, w - 1);
          sum += s.value[q];
          ok = ok && usable[q];
        }
      }
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      s.patch_mean[i] = sum / kPatchSize;
      s.patch_valid[i] = ok && inside[i];
    }
  }
}

void descriptor(const PatchSource& s, int x, int y, double* out) {
  const std::size_t center = static_cast<std::size_t>(y) * s.width + x;
  const double mean = s.patch_mean[center];
  int k = 0;
  for (int oy = -kPatchRadius; oy <= kPatchRadius; ++oy) {
    const int yy = std::clamp(y + oy, 0, s.height - 1);
    for (int ox = -kPatchRadius; ox <= kPatchRadius; ++ox) {
      const std::size_t q = static_cast<std::size_t>(yy) * s.width + std::clamp(x + ox, 0, s.width - 1);
      out[k] = s.value[q] - mean;
      out[kPatchSize + k] = s.gx[q];
      out[2 * kPatchSize + k] = s.gy[q];
      ++k;
    }
  }
}

// Softmin expectation over the entries `keep` accepts. Returns false when
// none survive.
template <typename Keep>
bool softmin_pixel(const double* cost, const std::vector<double>& depths, double temperature, Keep keep,
                   double& depth, double& variance) {
  const std::size_t n = depths.size();
  double cmin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    if (keep(k)) cmin = std::min(cmin, cost[k]);
  }
  if (!std::isfinite(cmin)) return false;
  double z = 0.0, mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!keep(k)) continue;
    const double wk = std::exp(-(cost[k] - cmin) / temperature);
    z += wk;
    mean += wk * depths[k];
  }
  mean /= z;
  double var = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!keep(k)) continue;
    const double wk = std::exp(-(cost[k] - cmin) / temperature);
    var += wk * (depths[k] - mean) * (depths[k] - mean);
  }
  // Rounding can push the expectation a hair outside the hypothesis range.
  depth = std::clamp(mean, depths.front(), depths.back());
  variance = var / z;
  return true;
}

}  // namespace

std::vector<double> hypothesis_depths(double depth_min, double depth_max, int count, bool inverse_depth) {
  if (count < 2) throw InvalidArgument("need at least two depth hypotheses");
  if (!(depth_min > 0.0 && depth_min < depth_max)) throw InvalidArgument("invalid depth range");
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double f = static_cast<double>(k) / (count - 1);
    if (inverse_depth) {
      // Uniform in 1/d, listed in increasing depth.
      const double inv = 1.0 / depth_min + f * (1.0 / depth_max - 1.0 / depth_min);
      out[k] = 1.0 / inv;
    } else {
      out[k] = depth_min + f * (depth_max - depth_min);
    }
  }
  out.front() = depth_min;
  out.back() = depth_max;
  return out;
}

CostVolume build_cost_volume(const View& ref, std::span<const View> sources, const CostVolumeOptions& options) {
  if (sources.empty()) throw InvalidArgument("cost volume needs at least one source view");
  if (options.hypotheses < 2) throw InvalidArgument("cost volume needs at least two hypotheses");
  const int w = ref.image.width();
  const int h = ref.image.height();
  const std::size_t pixels = static_cast<std::size_t>(w) * h;
  const std::size_t entries = pixels * static_cast<std::size_t>(options.hypotheses);
  const std::size_t required = entries * (sizeof(double) + 1);
  if (entries / static_cast<std::size_t>(options.hypotheses) != pixels || required > options.memory_budget) {
    throw InvalidArgument("cost volume needs " + std::to_string(required) + " bytes, budget is " +
                          std::to_string(options.memory_budget));
  }

  CostVolume cv;
  cv.width = w;
  cv.height = h;
  cv.depths = hypothesis_depths(ref.camera.depth_min, ref.camera.depth_max, options.hypotheses,
                                options.inverse_depth);
  const std::size_t nd = cv.depths.size();
  cv.cost.assign(entries, 0.0);
  cv.counted.assign(entries, 0);
  cv.pixel_valid = Mask(w, h, 0);

  PatchSource ref_patch;
  ref_patch.width = w;
  ref_patch.height = h;
  ref_patch.value = to_gray(ref.image).samples();
  const std::vector<std::uint8_t> all(pixels, 1);
  prepare_patches(ref_patch, all, all);

  std::vector<Raster> gray;
  std::vector<ViewTransfer> transfers;
  for (const auto& s : sources) {
    gray.push_back(to_gray(s.image));
    transfers.emplace_back(ref.camera, s.camera);
  }

  std::vector<PatchSource> warped(sources.size());
  std::vector<std::uint8_t> defined(pixels), inside(pixels);
  const std::size_t views = sources.size() + 1;
  std::vector<std::array<double, kDescriptorSize>> desc(views);
  for (std::size_t k = 0; k < nd; ++k) {
    const double d = cv.depths[k];
    for (std::size_t j = 0; j < sources.size(); ++j) {
      PatchSource& ps = warped[j];
      ps.width = w;
      ps.height = h;
      ps.value.assign(pixels, 0.0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          const auto r = transfers[j].apply(Eigen::Vector2d(x, y), d);
          defined[i] = 0;
          inside[i] = 0;
          if (!r.valid) continue;
          // Border padding outside the frame.
          const double sx = std::clamp(r.pixel.x(), 0.0, static_cast<double>(gray[j].width() - 1));
          const double sy = std::clamp(r.pixel.y(), 0.0, static_cast<double>(gray[j].height() - 1));
          ps.value[i] = sample_bilinear(gray[j], sx, sy, 0).value;
          defined[i] = 1;
          inside[i] = sx == r.pixel.x() && sy == r.pixel.y();
        }
      }
      prepare_patches(ps, defined, inside);
    }

    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        std::size_t n = 0;
        descriptor(ref_patch, x, y, desc[n++].data());
        for (const auto& ps : warped) {
          if (ps.patch_valid[i]) descriptor(ps, x, y, desc[n++].data());
        }
        if (n < 2) continue;
        double total = 0.0;
        for (int e = 0; e < kDescriptorSize; ++e) {
          double mean = 0.0;
          for (std::size_t v = 0; v < n; ++v) mean += desc[v][e];
          mean /= static_cast<double>(n);
          for (std::size_t v = 0; v < n; ++v) total += (desc[v][e] - mean) * (desc[v][e] - mean);
        }
        cv.cost[i * nd + k] = options.cost_scale * total / (static_cast<double>(n) * kDescriptorSize);
        cv.counted[i * nd + k] = 1;
      }
    }
  }

  // Uncounted entries take the worst counted cost of their pixel; pixels with
  // nothing counted stay uniform (zero).
  bool any = false;
  for (std::size_t i = 0; i < pixels; ++i) {
    double worst = -1.0;
    for (std::size_t k = 0; k < nd; ++k) {
      if (cv.counted[i * nd + k]) worst = std::max(worst, cv.cost[i * nd + k]);
    }
    if (worst < 0.0) continue;
    any = true;
    cv.pixel_valid[i] = 1;
    for (std::size_t k = 0; k < nd; ++k) {
      if (!cv.counted[i * nd + k]) cv.cost[i * nd + k] = worst;
    }
  }
  cv.degenerate = !any;
  return cv;
}

DepthEstimate soft_argmin_depth(const CostVolume& volume, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  return dropout_sample(volume, 0.0, temperature, 0);
}

DepthEstimate dropout_sample(const CostVolume& volume, double drop_rate, double temperature, std::uint64_t seed) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw InvalidArgument("drop rate must lie in [0, 1)");
  const int w = volume.width;
  const int h = volume.height;
  const std::size_t nd = volume.hypotheses();
  DepthEstimate out{DepthMap(w, h), Grid<double>(w, h, 0.0)};
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> keep(nd, 1);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    if (drop_rate > 0.0) {
      for (std::size_t k = 0; k < nd; ++k) {
        keep[k] = static_cast<double>(rng() >> 11) * 0x1.0p-53 >= drop_rate;
      }
    }
    if (!volume.pixel_valid[i]) continue;
    double depth = 0.0, variance = 0.0;
    const bool ok = softmin_pixel(&volume.cost[i * nd], volume.depths, temperature,
                                  [&](std::size_t k) { return keep[k] != 0; }, depth, variance);
    if (!ok) continue;
    out.depth.depth[i] = depth;
    out.depth.valid[i] = 1;
    out.variance[i] = variance;
  }
  return out;
}

void SamplerSpec::validate() const {
  if (samples < 2) throw InvalidArgument("sampler needs at least two samples");
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw InvalidArgument("drop rate must lie in [0, 1)");
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
}

EnsembleStack mc_sample(const CostVolume& volume, const SamplerSpec& spec) {
  spec.validate();
  EnsembleStack stack;
  for (int t = 0; t < spec.samples; ++t) {
    auto est = dropout_sample(volume, spec.drop_rate, spec.temperature,
                              derive_seed(spec.seed, 0x6d63, static_cast<std::uint64_t>(t)));
    stack.depths.push_back(std::move(est.depth));
    stack.variances.push_back(std::move(est.variance));
  }
  return stack;
}

EnsembleStack mc_sample(const View& ref, std::span<const View> sources, const CostVolumeOptions& options,
                        const SamplerSpec& spec) {
  spec.validate();
  return mc_sample(build_cost_volume(ref, sources, options), spec);
}

// ---------------------------------------------------------------- flow

namespace {

Raster downsample(const Raster& img) {
  const int w = std::max(1, (img.width() + 1) / 2);
  const int h = std::max(1, (img.height() + 1) / 2);
  Raster out(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          s += img.at(std::min(2 * x + dx, img.width() - 1), std::min(2 * y + dy, img.height() - 1), 0);
        }
      }
      out.at(x, y, 0) = 0.25 * s;
    }
  }
  return out;
}

double window_ssd(const Raster& a, const Raster& b, int x, int y, int dx, int dy, int radius) {
  const int w = a.width();
  const int h = a.height();
  double s = 0.0;
  for (int oy = -radius; oy <= radius; ++oy) {
    const int ay = std::clamp(y + oy, 0, h - 1);
    const int by = std::clamp(y + oy + dy, 0, h - 1);
    for (int ox = -radius; ox <= radius; ++ox) {
      const double diff = a.at(std::clamp(x + ox, 0, w - 1), ay, 0) - b.at(std::clamp(x + ox + dx, 0, w - 1), by, 0);
      s += diff * diff;
    }
  }
  return s;
}

double parabola_offset(double minus, double center, double plus) {
  const double denom = minus - 2.0 * center + plus;
  if (!(denom > 0.0)) return 0.0;
  return std::clamp(0.5 * (minus - plus) / denom, -0.5, 0.5);
}

}  // namespace

FlowField block_match_flow(const Raster& a, const Raster& b, const BlockMatchOptions& options) {
  if (!(a.width() == b.width() && a.height() == b.height())) {
    throw InvalidArgument("block matching needs images of equal size");
  }
  if (options.max_disp < 0 || options.levels < 1 || options.window < 1 || options.window % 2 == 0) {
    throw InvalidArgument("block matching needs max_disp >= 0, levels >= 1 and an odd window");
  }
  std::vector<Raster> pa{to_gray(a)}, pb{to_gray(b)};
  for (int l = 1; l < options.levels; ++l) {
    pa.push_back(downsample(pa.back()));
    pb.push_back(downsample(pb.back()));
  }
  const int radius = options.window / 2;
  const int m = options.max_disp;

  FlowField flow;
  for (int l = options.levels - 1; l >= 0; --l) {
    const Raster& ia = pa[l];
    const Raster& ib = pb[l];
    const int w = ia.width();
    const int h = ia.height();
    FlowField next = zero_flow(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        Eigen::Vector2d init = Eigen::Vector2d::Zero();
        if (!flow.empty()) {
          init = 2.0 * flow(std::min(x / 2, flow.width() - 1), std::min(y / 2, flow.height() - 1));
        }
        const int cx = static_cast<int>(std::lround(init.x()));
        const int cy = static_cast<int>(std::lround(init.y()));
        double best = std::numeric_limits<double>::infinity();
        int best_r2 = 0;
        int bx = cx, by = cy;
        for (int dy = -m; dy <= m; ++dy) {
          for (int dx = -m; dx <= m; ++dx) {
            const double c = window_ssd(ia, ib, x, y, cx + dx, cy + dy, radius);
            const int r2 = dx * dx + dy * dy;
            if (c < best || (c == best && r2 < best_r2)) {
              best = c;
              best_r2 = r2;
              bx = cx + dx;
              by = cy + dy;
            }
          }
        }
        Eigen::Vector2d f(bx, by);
        // A zero-cost match is exact; refinement would only add bias.
        if (l == 0 && best > 0.0) {
          f.x() += parabola_offset(window_ssd(ia, ib, x, y, bx - 1, by, radius), best,
                                   window_ssd(ia, ib, x, y, bx + 1, by, radius));
          f.y() += parabola_offset(window_ssd(ia, ib, x, y, bx, by - 1, radius), best,
                                   window_ssd(ia, ib, x, y, bx, by + 1, radius));
        }
        next(x, y) = f;
      }
    }
    flow = std::move(next);
  }
  return flow;
}

}  // namespace uamvs
