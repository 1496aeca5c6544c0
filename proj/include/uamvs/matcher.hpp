#pragma once

// Plane-sweep depth estimation with a variance cost volume, soft-argmin
// regression, cost-dropout ensembles and a block-matching flow estimator.

#include <cstdint>
#include <span>
#include <vector>

#include "uamvs/geometry.hpp"
#include "uamvs/grid.hpp"
#include "uamvs/losses.hpp"
#include "uamvs/uncertainty.hpp"

namespace uamvs {

inline constexpr int kDefaultHypotheses = 192;
inline constexpr double kDefaultTemperature = 1.0;
inline constexpr double kDefaultCostScale = 1e5;

struct CostVolume {
  int width = 0;
  int height = 0;
  std::vector<double> depths;        // strictly increasing
  std::vector<double> cost;          // (y * width + x) * depths.size() + k
  std::vector<std::uint8_t> counted; // entry had >= 2 participating views
  Mask pixel_valid;                  // pixel has at least one counted entry
  bool degenerate = false;           // no pixel has any counted entry

  std::size_t hypotheses() const { return depths.size(); }
  double at(int x, int y, std::size_t k) const {
    return cost[(static_cast<std::size_t>(y) * width + x) * depths.size() + k];
  }
};

struct CostVolumeOptions {
  int hypotheses = kDefaultHypotheses;
  bool inverse_depth = false;
  // Refuse volumes whose storage would exceed this many bytes.
  std::size_t memory_budget = std::size_t{1} << 31;
  // Multiplies the raw descriptor variance. Well-matched textured patches of
  // [0, 1] intensities have variances around 1e-5, so the default brings
  // costs to O(1) at temperature 1.
  double cost_scale = kDefaultCostScale;
};

std::vector<double> hypothesis_depths(double depth_min, double depth_max, int count, bool inverse_depth);

// Fronto-parallel sweep over the reference camera's depth range. The cost of
// a hypothesis is the mean over descriptor entries of the across-view
// (population) variance of 5x5 mean-subtracted intensity and forward-gradient
// patches. Warped samples outside a source frame are border-padded; a source
// takes part at a pixel when the patch center lands inside its frame and the
// whole patch is in front of it.
CostVolume build_cost_volume(const View& ref, std::span<const View> sources,
                             const CostVolumeOptions& options = {});

struct DepthEstimate {
  DepthMap depth;
  Grid<double> variance;  // Σ_k w_k (d_k - D)²
};

DepthEstimate soft_argmin_depth(const CostVolume& volume, double temperature = kDefaultTemperature);

struct SamplerSpec {
  int samples = kDefaultSamples;
  double drop_rate = 0.2;
  std::uint64_t seed = 0;
  double temperature = kDefaultTemperature;

  void validate() const;
};

// One stochastic pass: each cost entry survives with probability
// 1 - drop_rate; the softmin is renormalized over survivors. Pixels that lose
// every entry are invalid in that sample.
DepthEstimate dropout_sample(const CostVolume& volume, double drop_rate, double temperature,
                             std::uint64_t seed);

EnsembleStack mc_sample(const CostVolume& volume, const SamplerSpec& spec);
EnsembleStack mc_sample(const View& ref, std::span<const View> sources,
                        const CostVolumeOptions& options, const SamplerSpec& spec);

struct BlockMatchOptions {
  int max_disp = 4;
  int levels = 3;
  int window = 9;
};

// Coarse-to-fine integer SSD search with quadratic sub-pixel refinement.
// Flow maps a pixel of `a` to its match in `b`.
FlowField block_match_flow(const Raster& a, const Raster& b, const BlockMatchOptions& options = {});

}  // namespace uamvs
