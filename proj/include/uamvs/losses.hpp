#pragma once

// Self-supervision objectives on a reference depth map, each with analytic
// gradients with respect to depth (and log-variance where it applies).
//
// Masked norms are vector 2-norms over every masked entry (all pixels and
// channels) and the normalizers are 1-norms of the masks.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uamvs/geometry.hpp"
#include "uamvs/grid.hpp"

namespace uamvs {

inline constexpr double kDefaultLambda = 0.1;
inline constexpr double kDefaultEpsilon = 0.5;

struct View {
  Raster image;
  Camera camera;
};

struct LossReport {
  std::string name;
  double value = 0.0;
  Grid<double> residual;
  std::optional<Grid<double>> grad_depth;
  std::optional<Grid<double>> grad_log_variance;
  double denom = 0.0;
  std::map<std::string, double> params;
};

// Sum over sources of [|(I - Î)⊙M|_2 + |(∇I - ∇Î)⊙M|_2] / |M|_1.
// Sources whose mask is empty contribute nothing; throws EmptySupport when
// every mask is empty.
LossReport photometric_loss(const View& ref, std::span<const View> sources, const DepthMap& depth);

// Same terms with M' = ½·exp(-logΣ²)⊙M plus ½·mean(logΣ²) over valid depth
// pixels. Exposes gradients for depth and log-variance.
LossReport aleatoric_photometric_loss(const View& ref, std::span<const View> sources,
                                      const DepthMap& depth, const Grid<double>& log_variance);

enum class OcclusionMode { kWarped, kLiteral };

// Returns the non-occluded (consistent) mask. Warped mode looks the backward
// flow up at p + F_fwd(p); out-of-frame lookups are inconsistent.
Mask occlusion_mask(const FlowField& forward, const FlowField& backward,
                    double epsilon = kDefaultEpsilon, OcclusionMode mode = OcclusionMode::kWarped);

// Per-pixel minimum over sources of |F - F̂|·O / sum(O), summed over pixels
// with at least one O set. `virtual_flows` carry d(F̂)/dD for the gradient;
// the gradient follows the arg-min source only (lowest index on ties).
LossReport flow_depth_loss(std::span<const VirtualFlow> virtual_flows,
                           std::span<const FlowField> measured, std::span<const Mask> masks);

// Builds virtual flows from `depth` and combines `masks` with their validity.
LossReport flow_depth_loss(const DepthMap& depth, const Camera& ref, std::span<const Camera> sources,
                           std::span<const FlowField> measured, std::span<const Mask> masks);

LossReport combined_loss(const LossReport& photometric, const LossReport& flow_depth,
                         double lambda = kDefaultLambda);

// |(D_aug - D̄)⊙Û|_2 / |Û|_1 over pixels where Û is set and both depths are
// valid. Throws EmptySupport for an empty support.
LossReport self_training_loss(const DepthMap& augmented, const DepthMap& pseudo_label,
                              const Mask& certain);

struct AugmentationSpec {
  double gain[3] = {1.0, 1.0, 1.0};
  double bias[3] = {0.0, 0.0, 0.0};
  double gamma = 1.0;
  std::uint64_t seed = 0;

  static constexpr double kGainMin = 0.8, kGainMax = 1.2;
  static constexpr double kBiasMin = -0.1, kBiasMax = 0.1;
  static constexpr double kGammaMin = 0.8, kGammaMax = 1.25;

  // Parameters drawn uniformly from the declared ranges.
  static AugmentationSpec random(std::uint64_t seed);
  void validate() const;
};

// clamp((gain·v + bias)^gamma, 0, 1) per channel, same parameters for every
// image. Pixel positions are untouched.
std::vector<Raster> augment(std::span<const Raster> images, const AugmentationSpec& spec);

}  // namespace uamvs
