#include "uamvs/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uamvs {

namespace {

// Shewchuk-style non-overlapping partials; value() is the correctly rounded
// total of everything added so far.
class ExactAccumulator {
 public:
  void add(double x) {
    std::size_t i = 0;
    for (double y : partials_) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[i++] = lo;
      x = hi;
    }
    partials_.resize(i);
    partials_.push_back(x);
  }

  double value() const {
    std::size_t n = partials_.size();
    if (n == 0) return 0.0;
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      const double yr = hi - x;
      lo = y - yr;
      if (lo != 0.0) break;
    }
    // Round-half-even correction when the remaining partials push past a tie.
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

 private:
  std::vector<double> partials_;
};

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::vector<CurvePoint> curve_for_order(const std::vector<std::size_t>& order,
                                        const std::vector<double>& abs_error, int bins) {
  std::vector<CurvePoint> out;
  out.reserve(static_cast<std::size_t>(bins));
  const std::size_t n = order.size();
  ExactAccumulator acc;
  std::size_t taken = 0;
  for (int k = 1; k <= bins; ++k) {
    std::size_t target = k == bins ? n : static_cast<std::size_t>(std::llround(static_cast<double>(k) * n / bins));
    target = std::clamp<std::size_t>(target, 1, n);
    while (taken < target) acc.add(abs_error[order[taken++]]);
    out.push_back({static_cast<double>(k) / bins, acc.value() / static_cast<double>(taken)});
  }
  return out;
}

}  // namespace

double exact_sum(std::span<const double> values) {
  ExactAccumulator acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("spearman needs two equal-length samples of size >= 2");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

EnsembleStats ensemble_stats(const EnsembleStack& stack) {
  const std::size_t t = stack.depths.size();
  if (t < 2) throw InvalidArgument("ensemble needs at least two samples");
  if (stack.variances.size() != t) throw InvalidArgument("ensemble needs one variance map per sample");
  const int w = stack.depths[0].width();
  const int h = stack.depths[0].height();
  for (std::size_t k = 0; k < t; ++k) {
    if (stack.depths[k].width() != w || stack.depths[k].height() != h ||
        stack.variances[k].width() != w || stack.variances[k].height() != h) {
      throw InvalidArgument("ensemble members differ in dimensions");
    }
  }

  EnsembleStats out{DepthMap(w, h), Grid<double>(w, h, 0.0)};
  const double inv_t = 1.0 / static_cast<double>(t);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    bool valid = true;
    double sum = 0.0;
    for (const auto& d : stack.depths) {
      valid = valid && d.valid[i];
      sum += d.depth[i];
    }
    if (!valid) continue;
    const double mean = sum * inv_t;
    double spread = 0.0;
    double aleatoric = 0.0;
    for (std::size_t k = 0; k < t; ++k) {
      const double dev = stack.depths[k].depth[i] - mean;
      spread += dev * dev;
      aleatoric += stack.variances[k][i];
    }
    out.mean.depth[i] = mean;
    out.mean.valid[i] = 1;
    out.uncertainty[i] = std::max(0.0, spread * inv_t + aleatoric * inv_t);
  }
  return out;
}

Mask certainty_mask(const Grid<double>& uncertainty, const CertaintyOptions& options, const Mask* valid) {
  if (!(options.xi > 0.0 && options.xi < 1.0)) throw InvalidArgument("xi must lie in (0, 1)");
  if (valid && !valid->same_shape(uncertainty)) throw InvalidArgument("mask and uncertainty differ in size");
  double scale = 1.0;
  if (options.normalize_interval) {
    if (!(*options.normalize_interval > 0.0)) throw InvalidArgument("normalization interval must be positive");
    scale = 1.0 / (*options.normalize_interval * *options.normalize_interval);
  }
  const double limit = -std::log(options.xi);
  Mask out(uncertainty.width(), uncertainty.height(), 0);
  for (std::size_t i = 0; i < uncertainty.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    out[i] = uncertainty[i] * scale < limit;
  }
  return out;
}

Sparsification sparsification_curve(const Grid<double>& confidence, const Grid<double>& error,
                                    const Mask& mask, int bins) {
  if (bins < 2) throw InvalidArgument("sparsification needs at least two bins");
  if (!confidence.same_shape(error) || !confidence.same_shape(mask)) {
    throw InvalidArgument("sparsification inputs differ in size");
  }
  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) pixels.push_back(i);
  }
  if (pixels.empty()) throw EmptySupport("sparsification mask is empty");

  std::vector<double> abs_error(error.size(), 0.0);
  for (std::size_t i : pixels) abs_error[i] = std::abs(error[i]);

  auto ranked = [&](auto key) {
    std::vector<std::size_t> order = pixels;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double ka = key(a), kb = key(b);
      return ka != kb ? ka > kb : a < b;
    });
    return order;
  };

  Sparsification s;
  s.curve = curve_for_order(ranked([&](std::size_t i) { return confidence[i]; }), abs_error, bins);
  s.oracle = curve_for_order(ranked([&](std::size_t i) { return -abs_error[i]; }), abs_error, bins);
  for (std::size_t k = 1; k < s.curve.size(); ++k) {
    const double gap0 = s.curve[k - 1].error - s.oracle[k - 1].error;
    const double gap1 = s.curve[k].error - s.oracle[k].error;
    s.area_to_oracle += 0.5 * (gap0 + gap1) * (s.curve[k].density - s.curve[k - 1].density);
  }
  return s;
}

}  // namespace uamvs
