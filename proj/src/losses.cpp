#include "uamvs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "uamvs/seed.hpp"

namespace uamvs {

namespace {

void check_views(const View& ref, std::span<const View> sources, const DepthMap& depth) {
  if (sources.empty()) throw InvalidArgument("photometric loss needs at least one source view");
  if (ref.image.width() != depth.width() || ref.image.height() != depth.height()) {
    throw InvalidArgument("reference image and depth map dimensions differ");
  }
  for (const auto& s : sources) {
    if (s.image.channels() != ref.image.channels()) {
      throw InvalidArgument("source and reference channel counts differ");
    }
  }
}

// Shared body of the plain and variance-weighted photometric terms. The
// per-pixel weight is M_j(p)·ω(p) with ω = 1 or ½·exp(-logΣ²).
LossReport photometric_terms(const View& ref, std::span<const View> sources, const DepthMap& depth,
                             const Grid<double>* log_variance) {
  check_views(ref, sources, depth);
  const int w = depth.width();
  const int h = depth.height();
  const int ch = ref.image.channels();
  const auto [ref_gx, ref_gy] = image_gradient(ref.image);

  Grid<double> omega(w, h, 1.0);
  if (log_variance) {
    if (!log_variance->same_shape(depth.depth)) {
      throw InvalidArgument("log-variance and depth dimensions differ");
    }
    for (std::size_t i = 0; i < omega.size(); ++i) omega[i] = 0.5 * std::exp(-(*log_variance)[i]);
  }

  LossReport report;
  report.residual = Grid<double>(w, h, 0.0);
  report.grad_depth = Grid<double>(w, h, 0.0);
  if (log_variance) report.grad_log_variance = Grid<double>(w, h, 0.0);
  auto& grad_d = *report.grad_depth;

  bool any_support = false;
  Raster synth(w, h, ch);
  Grid<double> weight(w, h);
  Raster err(w, h, ch), gerr_x(w, h, ch), gerr_y(w, h, ch);
  for (const View& src : sources) {
    const WarpField warp = warp_field(depth, ref.camera, src.camera, src.image.width(), src.image.height());
    const SampledImage sampled = bilinear_sample(src.image, warp.coords);

    double weight_sum = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      const bool m = warp.valid[i] && sampled.inbounds[i];
      weight[i] = m ? omega[i] : 0.0;
      weight_sum += weight[i];
      for (int c = 0; c < ch; ++c) {
        // Unsupported pixels copy the reference so image gradients carry no
        // jump at the mask border.
        synth.samples()[i * ch + c] = m ? sampled.values.samples()[i * ch + c] : ref.image.samples()[i * ch + c];
      }
    }
    if (weight_sum <= 0.0) continue;
    any_support = true;

    const auto [syn_gx, syn_gy] = image_gradient(synth);
    double sum_photo = 0.0;
    double sum_grad = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      const double w2 = weight[i] * weight[i];
      for (int c = 0; c < ch; ++c) {
        const std::size_t k = i * ch + c;
        err.samples()[k] = ref.image.samples()[k] - synth.samples()[k];
        gerr_x.samples()[k] = ref_gx.samples()[k] - syn_gx.samples()[k];
        gerr_y.samples()[k] = ref_gy.samples()[k] - syn_gy.samples()[k];
        sum_photo += err.samples()[k] * err.samples()[k] * w2;
        sum_grad += (gerr_x.samples()[k] * gerr_x.samples()[k] + gerr_y.samples()[k] * gerr_y.samples()[k]) * w2;
      }
    }
    const double a = std::sqrt(sum_photo);
    const double b = std::sqrt(sum_grad);
    const double term = (a + b) / weight_sum;
    report.value += term;
    report.denom += weight_sum;

    const double inv_a = a > 0.0 ? 1.0 / a : 0.0;
    const double inv_b = b > 0.0 ? 1.0 / b : 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double w2 = weight[i] * weight[i];
        double pixel_photo = 0.0;
        double pixel_grad = 0.0;
        double d_value_d_depth = 0.0;
        double d_value_d_logvar = 0.0;
        for (int c = 0; c < ch; ++c) {
          const std::size_t k = i * ch + c;
          const double e = err.samples()[k];
          const double gx = gerr_x.samples()[k];
          const double gy = gerr_y.samples()[k];
          pixel_photo += e * e * w2;
          pixel_grad += (gx * gx + gy * gy) * w2;
          if (weight[i] == 0.0) continue;

          // d(value)/d(Î(p,c)): Î(p) enters err(p), gerr(p) with +1 and
          // gerr(p - x̂), gerr(p - ŷ) with -1.
          double d_b = (gx + gy) * w2;
          if (x > 0) {
            const double wl = weight[i - 1];
            d_b -= gerr_x.samples()[(i - 1) * ch + c] * wl * wl;
          }
          if (y > 0) {
            const double wu = weight[i - w];
            d_b -= gerr_y.samples()[(i - w) * ch + c] * wu * wu;
          }
          const double d_synth = (-e * w2 * inv_a + d_b * inv_b) / weight_sum;
          const Eigen::Vector2d& jac = warp.jacobian(x, y);
          d_value_d_depth += d_synth * (sampled.dx.samples()[k] * jac.x() + sampled.dy.samples()[k] * jac.y());
        }
        report.residual[i] += std::sqrt(pixel_photo + pixel_grad);
        grad_d[i] += d_value_d_depth;
        if (log_variance && weight[i] != 0.0) {
          // d(weight)/d(logΣ²) = -weight.
          d_value_d_logvar = (-pixel_photo * inv_a - pixel_grad * inv_b) / weight_sum +
                             (a + b) * weight[i] / (weight_sum * weight_sum);
          (*report.grad_log_variance)[i] += d_value_d_logvar;
        }
      }
    }
  }
  if (!any_support) throw EmptySupport("no valid supervision support");

  if (log_variance) {
    const std::size_t n = count(depth.valid);
    if (n > 0) {
      double sum = 0.0;
      for (std::size_t i = 0; i < depth.valid.size(); ++i) {
        if (depth.valid[i]) sum += (*log_variance)[i];
      }
      report.value += 0.5 * sum / static_cast<double>(n);
      for (std::size_t i = 0; i < depth.valid.size(); ++i) {
        if (depth.valid[i]) (*report.grad_log_variance)[i] += 0.5 / static_cast<double>(n);
      }
    }
  }
  return report;
}

}  // namespace

LossReport photometric_loss(const View& ref, std::span<const View> sources, const DepthMap& depth) {
  LossReport r = photometric_terms(ref, sources, depth, nullptr);
  r.name = "photometric";
  return r;
}

LossReport aleatoric_photometric_loss(const View& ref, std::span<const View> sources,
                                      const DepthMap& depth, const Grid<double>& log_variance) {
  LossReport r = photometric_terms(ref, sources, depth, &log_variance);
  r.name = "aleatoric_photometric";
  return r;
}

Mask occlusion_mask(const FlowField& forward, const FlowField& backward, double epsilon,
                    OcclusionMode mode) {
  if (!forward.same_shape(backward)) throw InvalidArgument("flow fields differ in size");
  Mask out(forward.width(), forward.height(), 0);
  for (int y = 0; y < forward.height(); ++y) {
    for (int x = 0; x < forward.width(); ++x) {
      const Eigen::Vector2d& f = forward(x, y);
      Eigen::Vector2d b;
      if (mode == OcclusionMode::kLiteral) {
        b = backward(x, y);
      } else {
        bool inside = false;
        b = sample_flow(backward, x + f.x(), y + f.y(), &inside);
        if (!inside) continue;
      }
      out(x, y) = (f + b).norm() <= epsilon;
    }
  }
  return out;
}

LossReport flow_depth_loss(std::span<const VirtualFlow> virtual_flows,
                           std::span<const FlowField> measured, std::span<const Mask> masks) {
  const std::size_t views = virtual_flows.size();
  if (views == 0 || measured.size() != views || masks.size() != views) {
    throw InvalidArgument("flow-depth loss needs equally many (>= 1) virtual flows, flows and masks");
  }
  const int w = virtual_flows[0].flow.width();
  const int h = virtual_flows[0].flow.height();
  std::vector<double> support(views, 0.0);
  for (std::size_t j = 0; j < views; ++j) {
    if (!virtual_flows[j].flow.same_shape(measured[j]) || !measured[j].same_shape(masks[j]) ||
        masks[j].width() != w || masks[j].height() != h) {
      throw InvalidArgument("flow-depth inputs differ in size");
    }
    support[j] = static_cast<double>(count(masks[j]));
  }
  if (std::all_of(support.begin(), support.end(), [](double s) { return s == 0.0; })) {
    throw EmptySupport("no valid supervision support");
  }

  LossReport report;
  report.name = "flow_depth";
  report.residual = Grid<double>(w, h, 0.0);
  report.grad_depth = Grid<double>(w, h, 0.0);
  for (double s : support) report.denom += s;
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = views;
    for (std::size_t j = 0; j < views; ++j) {
      if (!masks[j][i]) continue;
      const double e = (measured[j][i] - virtual_flows[j].flow[i]).norm() / support[j];
      if (e < best) {
        best = e;
        arg = j;
      }
    }
    if (arg == views) continue;
    report.value += best;
    report.residual[i] = best;
    const Eigen::Vector2d diff = virtual_flows[arg].flow[i] - measured[arg][i];
    const double norm = diff.norm();
    if (norm > 0.0) {
      (*report.grad_depth)[i] = diff.dot(virtual_flows[arg].jacobian[i]) / (norm * support[arg]);
    }
  }
  return report;
}

LossReport flow_depth_loss(const DepthMap& depth, const Camera& ref, std::span<const Camera> sources,
                           std::span<const FlowField> measured, std::span<const Mask> masks) {
  if (sources.size() != measured.size() || sources.size() != masks.size()) {
    throw InvalidArgument("flow-depth loss needs one flow and mask per source");
  }
  std::vector<VirtualFlow> virtual_flows;
  std::vector<Mask> combined;
  for (std::size_t j = 0; j < sources.size(); ++j) {
    virtual_flows.push_back(depth_to_flow(depth, ref, sources[j]));
    if (!masks[j].same_shape(depth.valid)) throw InvalidArgument("mask and depth dimensions differ");
    Mask m = masks[j];
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] && virtual_flows.back().valid[i];
    combined.push_back(std::move(m));
  }
  return flow_depth_loss(virtual_flows, measured, combined);
}

LossReport combined_loss(const LossReport& photometric, const LossReport& flow_depth, double lambda) {
  LossReport r;
  r.name = "combined";
  r.value = photometric.value + lambda * flow_depth.value;
  r.denom = photometric.denom;
  r.params = photometric.params;
  r.params["lambda"] = lambda;
  if (photometric.residual.same_shape(flow_depth.residual)) {
    r.residual = photometric.residual;
    for (std::size_t i = 0; i < r.residual.size(); ++i) r.residual[i] += lambda * flow_depth.residual[i];
  } else {
    r.residual = photometric.residual.empty() ? flow_depth.residual : photometric.residual;
  }
  if (photometric.grad_depth && flow_depth.grad_depth &&
      photometric.grad_depth->same_shape(*flow_depth.grad_depth)) {
    Grid<double> g = *photometric.grad_depth;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += lambda * (*flow_depth.grad_depth)[i];
    r.grad_depth = std::move(g);
  }
  r.grad_log_variance = photometric.grad_log_variance;
  return r;
}

LossReport self_training_loss(const DepthMap& augmented, const DepthMap& pseudo_label,
                              const Mask& certain) {
  if (!augmented.depth.same_shape(pseudo_label.depth) || !certain.same_shape(augmented.depth)) {
    throw InvalidArgument("self-training inputs differ in size");
  }
  const int w = augmented.width();
  const int h = augmented.height();
  LossReport r;
  r.name = "self_training";
  r.residual = Grid<double>(w, h, 0.0);
  r.grad_depth = Grid<double>(w, h, 0.0);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < certain.size(); ++i) {
    if (!(certain[i] && augmented.valid[i] && pseudo_label.valid[i])) continue;
    const double d = augmented.depth[i] - pseudo_label.depth[i];
    r.denom += 1.0;
    sum_sq += d * d;
    r.residual[i] = std::abs(d);
  }
  if (r.denom == 0.0) throw EmptySupport("empty certainty support");
  const double norm = std::sqrt(sum_sq);
  r.value = norm / r.denom;
  if (norm > 0.0) {
    for (std::size_t i = 0; i < certain.size(); ++i) {
      if (!(certain[i] && augmented.valid[i] && pseudo_label.valid[i])) continue;
      (*r.grad_depth)[i] = (augmented.depth[i] - pseudo_label.depth[i]) / (norm * r.denom);
    }
  }
  return r;
}

AugmentationSpec AugmentationSpec::random(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x617567));
  // Raw 53-bit draws keep the parameters identical across standard libraries.
  auto uniform = [&](double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  };
  AugmentationSpec s;
  s.seed = seed;
  for (int c = 0; c < 3; ++c) s.gain[c] = uniform(kGainMin, kGainMax);
  for (int c = 0; c < 3; ++c) s.bias[c] = uniform(kBiasMin, kBiasMax);
  s.gamma = uniform(kGammaMin, kGammaMax);
  return s;
}

void AugmentationSpec::validate() const {
  for (int c = 0; c < 3; ++c) {
    if (!(gain[c] >= kGainMin && gain[c] <= kGainMax)) throw InvalidArgument("augmentation gain out of range");
    if (!(bias[c] >= kBiasMin && bias[c] <= kBiasMax)) throw InvalidArgument("augmentation bias out of range");
  }
  if (!(gamma >= kGammaMin && gamma <= kGammaMax)) throw InvalidArgument("augmentation gamma out of range");
}

std::vector<Raster> augment(std::span<const Raster> images, const AugmentationSpec& spec) {
  spec.validate();
  std::vector<Raster> out;
  out.reserve(images.size());
  for (const Raster& img : images) {
    Raster r = img;
    const int ch = img.channels();
    for (std::size_t i = 0; i < r.samples().size(); ++i) {
      const int c = static_cast<int>(i % ch) % 3;
      const double base = std::max(0.0, spec.gain[c] * img.samples()[i] + spec.bias[c]);
      r.samples()[i] = std::clamp(std::pow(base, spec.gamma), 0.0, 1.0);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace uamvs
