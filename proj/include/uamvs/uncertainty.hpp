#pragma once

// Ensemble (epistemic) uncertainty, certainty masking and sparsification
// curves.

#include <optional>
#include <span>
#include <vector>

#include "uamvs/grid.hpp"

namespace uamvs {

inline constexpr double kDefaultXi = 0.3;
inline constexpr int kDefaultSamples = 20;

struct EnsembleStack {
  std::vector<DepthMap> depths;        // D_t
  std::vector<Grid<double>> variances; // σ_t², same count as depths

  std::size_t size() const { return depths.size(); }
};

struct EnsembleStats {
  DepthMap mean;        // pseudo label; valid where every sample is valid
  Grid<double> uncertainty;
};

// Population variance of the samples (two-pass) plus the mean aleatoric
// variance, clamped at zero. Needs T >= 2.
EnsembleStats ensemble_stats(const EnsembleStack& stack);

struct CertaintyOptions {
  double xi = kDefaultXi;
  // When set, U is divided by interval² before thresholding.
  std::optional<double> normalize_interval;
};

// Set iff exp(-U) > xi, evaluated as U < -ln(xi). Only pixels set in `valid`
// (when given) can be certain.
Mask certainty_mask(const Grid<double>& uncertainty, const CertaintyOptions& options = {},
                    const Mask* valid = nullptr);

struct CurvePoint {
  double density;
  double error;
};

struct Sparsification {
  std::vector<CurvePoint> curve;
  std::vector<CurvePoint> oracle;
  double area_to_oracle = 0.0;  // trapezoid area of curve - oracle over density
};

// Pixels in `mask` ranked by decreasing confidence (ties by pixel index);
// point k of `bins` reports the mean |error| of the first round(k·N/bins)
// pixels. The oracle ranks by -|error|.
Sparsification sparsification_curve(const Grid<double>& confidence, const Grid<double>& error,
                                    const Mask& mask, int bins);

// Correctly rounded sum; independent of summation order.
double exact_sum(std::span<const double> values);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace uamvs
