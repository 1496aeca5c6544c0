#pragma once

// Brute-force reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <mpfr.h>

#include <Eigen/Core>

#include "uamvs/grid.hpp"
#include "uamvs/scene_io.hpp"
#include "uamvs/uncertainty.hpp"

namespace uamvs::testing {

// Correctly rounded sum via MPFR's exact summation.
inline double mpfr_exact_sum(std::span<const double> values) {
  std::vector<mpfr_t> terms(values.size());
  std::vector<mpfr_ptr> ptrs(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    mpfr_init2(terms[i], 53);
    mpfr_set_d(terms[i], values[i], MPFR_RNDN);
    ptrs[i] = terms[i];
  }
  mpfr_t total;
  mpfr_init2(total, 53);
  mpfr_sum(total, ptrs.data(), values.size(), MPFR_RNDN);
  const double out = mpfr_get_d(total, MPFR_RNDN);
  mpfr_clear(total);
  for (auto& t : terms) mpfr_clear(t);
  return out;
}

// Two-pass population variance plus mean aleatoric variance, in long double.
inline EnsembleStats brute_ensemble(const EnsembleStack& stack) {
  const int w = stack.depths[0].width();
  const int h = stack.depths[0].height();
  const std::size_t t = stack.size();
  EnsembleStats out{DepthMap(w, h), Grid<double>(w, h, 0.0)};
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    bool valid = true;
    for (const auto& d : stack.depths) valid = valid && d.valid[i];
    if (!valid) continue;
    long double mean = 0.0L;
    for (const auto& d : stack.depths) mean += d.depth[i];
    mean /= t;
    long double var = 0.0L;
    long double alea = 0.0L;
    for (std::size_t k = 0; k < t; ++k) {
      const long double dev = stack.depths[k].depth[i] - mean;
      var += dev * dev;
      alea += stack.variances[k][i];
    }
    out.mean.depth[i] = static_cast<double>(mean);
    out.mean.valid[i] = 1;
    out.uncertainty[i] = static_cast<double>(std::max(0.0L, (var + alea) / t));
  }
  return out;
}

struct BruteHit {
  std::size_t index;
  double distance;
};

// Linear scan; ties go to the lower index.
inline BruteHit brute_nearest(const std::vector<Eigen::Vector3d>& points, const Eigen::Vector3d& q) {
  BruteHit best{0, std::numeric_limits<double>::infinity()};
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d2 = (points[i] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = {i, std::sqrt(d2)};
    }
  }
  return best;
}

struct BruteMetrics {
  double accuracy, completeness, overall, precision, recall, f;
};

inline BruteMetrics brute_metrics(const PointCloud& recon, const PointCloud& gt, double max_dist, double threshold) {
  std::vector<double> acc, comp;
  std::size_t good_p = 0, good_r = 0;
  for (const auto& p : recon.points) {
    const double d = brute_nearest(gt.points, p).distance;
    acc.push_back(std::min(d, max_dist));
    good_p += d < threshold;
  }
  for (const auto& p : gt.points) {
    const double d = brute_nearest(recon.points, p).distance;
    comp.push_back(std::min(d, max_dist));
    good_r += d < threshold;
  }
  BruteMetrics m{};
  m.accuracy = mpfr_exact_sum(acc) / static_cast<double>(acc.size());
  m.completeness = mpfr_exact_sum(comp) / static_cast<double>(comp.size());
  m.overall = 0.5 * (m.accuracy + m.completeness);
  m.precision = static_cast<double>(good_p) / static_cast<double>(recon.size());
  m.recall = static_cast<double>(good_r) / static_cast<double>(gt.size());
  m.f = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

}  // namespace uamvs::testing
