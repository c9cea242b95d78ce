#pragma once

// Saliency evaluation: plausibility (EBPG, sparsity), faithfulness
// (deletion/insertion curves), ground-truth matching, map comparison, and
// 1-D k-means for object-size grouping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dclose/core.hpp"
#include "dclose/detector.hpp"
#include "dclose/saliency.hpp"

namespace dclose {

// ---------------------------------------------------------------------------
// Plausibility
// ---------------------------------------------------------------------------

// Percentage of saliency energy inside the box.
inline double ebpg(const SaliencyMap& m, const BBox& gt) {
  double inside = 0.0, total = 0.0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const double v = m.at(x, y);
      total += v;
      if (gt.contains_pixel(x, y)) inside += v;
    }
  if (total <= 0.0) return 0.0;
  return std::clamp(100.0 * inside / total, 0.0, 100.0);
}

// max / mean; equals 1 / mean on a normalized map.
inline double sparsity(const SaliencyMap& m) {
  if (m.values.empty()) throw UndefinedMetric("sparsity: empty map");
  const double mean = m.sum() / static_cast<double>(m.values.size());
  if (mean <= 0.0) throw UndefinedMetric("sparsity: all-zero map");
  return static_cast<double>(m.max_value()) / mean;
}

// ---------------------------------------------------------------------------
// Faithfulness
// ---------------------------------------------------------------------------

struct CurvePoint {
  double fraction = 0.0;
  double score = 0.0;
};

struct Curve {
  std::vector<CurvePoint> points;
  double auc = 0.0;
  std::uint64_t detector_calls = 0;
};

inline double trapezoid_auc(const std::vector<CurvePoint>& pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    a += (pts[i].fraction - pts[i - 1].fraction) * (pts[i].score + pts[i - 1].score) * 0.5;
  return a;
}

// Pixel indices by descending saliency; ties keep row-major order.
inline std::vector<std::size_t> saliency_order(const SaliencyMap& m) {
  std::vector<std::size_t> order(m.values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m.values[a] > m.values[b]; });
  return order;
}

// Separable binomial blur (kernel of `kernel` taps), repeated `passes` times,
// edges replicated.
inline ImageBuffer binomial_blur(const ImageBuffer& img, int kernel = 11, int passes = 3) {
  if (kernel < 1 || kernel % 2 == 0) throw InvalidInput("blur kernel must be odd and positive");
  std::vector<double> taps(static_cast<std::size_t>(kernel), 1.0);
  for (int i = 1; i < kernel; ++i)
    for (int j = i; j > 0; --j) taps[j] += taps[j - 1];
  const double norm = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (double& t : taps) t /= norm;
  const int rad = kernel / 2;
  const int w = img.width, h = img.height;

  ImageBuffer cur = img, tmp = img;
  for (int pass = 0; pass < passes; ++pass) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          double s = 0.0;
          for (int k = -rad; k <= rad; ++k) s += taps[k + rad] * cur.at(std::clamp(x + k, 0, w - 1), y, c);
          tmp.at(x, y, c) = static_cast<float>(s);
        }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          double s = 0.0;
          for (int k = -rad; k <= rad; ++k) s += taps[k + rad] * tmp.at(x, std::clamp(y + k, 0, h - 1), c);
          cur.at(x, y, c) = std::clamp(static_cast<float>(s), 0.0f, 1.0f);
        }
  }
  return cur;
}

struct CurveOptions {
  int steps = 100;
  double score_floor = 0.05;
  int batch_size = 32;
};

// Starts from `start` and, step by step, copies pixels from `end` in the
// given order; scores every intermediate image (steps+1 of them).
inline Curve perturbation_curve(const ImageBuffer& start, const ImageBuffer& end, Detector& det,
                                const TargetSpec& target, std::span<const std::size_t> order,
                                const CurveOptions& opt = {}) {
  if (opt.steps < 2) throw InvalidInput("curve: steps must be >= 2");
  if (start.width != end.width || start.height != end.height) throw InvalidInput("curve: image dimensions differ");
  const std::size_t npix = start.pixel_count();
  if (order.size() != npix) throw InvalidInput("curve: pixel order must cover every pixel");

  Curve curve;
  ImageBuffer cur = start;
  std::vector<ImageBuffer> pending;
  std::vector<double> fractions;
  const auto flush = [&] {
    if (pending.empty()) return;
    const auto props = det.detect_batch(pending);
    for (std::size_t j = 0; j < props.size(); ++j)
      curve.points.push_back({fractions[j], mask_weight(props[j], target, opt.score_floor)});
    curve.detector_calls += pending.size();
    pending.clear();
    fractions.clear();
  };

  std::size_t done = 0;
  for (int k = 0; k <= opt.steps; ++k) {
    const std::size_t upto = static_cast<std::size_t>(
        std::llround(static_cast<double>(k) * static_cast<double>(npix) / opt.steps));
    for (; done < upto; ++done) {
      const std::size_t p = order[done];
      for (int c = 0; c < 3; ++c) cur.data[3 * p + c] = end.data[3 * p + c];
    }
    pending.push_back(cur);
    fractions.push_back(static_cast<double>(k) / opt.steps);
    if (static_cast<int>(pending.size()) >= opt.batch_size) flush();
  }
  flush();
  curve.auc = trapezoid_auc(curve.points);
  return curve;
}

// Removes the most salient pixels first, replacing them with `baseline`
// (black when omitted).
inline Curve deletion_curve(const ImageBuffer& img, Detector& det, const TargetSpec& target, const SaliencyMap& m,
                            const CurveOptions& opt = {}, const std::optional<ImageBuffer>& baseline = std::nullopt) {
  if (!m.same_shape(img.width, img.height)) throw InvalidInput("deletion: map and image dimensions differ");
  const ImageBuffer base = baseline ? *baseline : ImageBuffer(img.width, img.height, 0.0f);
  const auto order = saliency_order(m);
  return perturbation_curve(img, base, det, target, order, opt);
}

// Restores the most salient pixels first onto `baseline` (blurred image when
// omitted).
inline Curve insertion_curve(const ImageBuffer& img, Detector& det, const TargetSpec& target, const SaliencyMap& m,
                             const CurveOptions& opt = {}, const std::optional<ImageBuffer>& baseline = std::nullopt) {
  if (!m.same_shape(img.width, img.height)) throw InvalidInput("insertion: map and image dimensions differ");
  const ImageBuffer base = baseline ? *baseline : binomial_blur(img);
  const auto order = saliency_order(m);
  return perturbation_curve(base, img, det, target, order, opt);
}

inline double overall(double insertion_auc, double deletion_auc) { return insertion_auc - deletion_auc; }

// ---------------------------------------------------------------------------
// Ground-truth matching
// ---------------------------------------------------------------------------

struct GroundTruth {
  BBox box;
  int class_id = 0;
  std::string class_name;
};

struct Match {
  std::size_t gt_index = 0;
  std::size_t det_index = 0;
  double iou = 0.0;
};

// Per class, greedy by descending IoU; each detection and each ground truth
// used at most once; pairs below `min_iou` dropped. A detection's class is
// its highest class score.
inline std::vector<Match> match_detections_to_gt(const ProposalSet& dets, const std::vector<GroundTruth>& gts,
                                                 double min_iou = 0.5) {
  std::vector<Match> candidates;
  for (std::size_t g = 0; g < gts.size(); ++g)
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (dets[d].class_scores.empty()) continue;
      if (static_cast<int>(dets[d].best_class()) != gts[g].class_id) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= min_iou) candidates.push_back({g, d, v});
    }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Match& a, const Match& b) { return a.iou > b.iou; });
  std::vector<bool> gt_used(gts.size(), false), det_used(dets.size(), false);
  std::vector<Match> out;
  for (const auto& c : candidates) {
    if (gt_used[c.gt_index] || det_used[c.det_index]) continue;
    gt_used[c.gt_index] = det_used[c.det_index] = true;
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const Match& a, const Match& b) { return a.gt_index < b.gt_index; });
  return out;
}

// ---------------------------------------------------------------------------
// Object-size grouping
// ---------------------------------------------------------------------------

enum class SizeGroup { Small = 0, Middle = 1, Large = 2 };

inline const char* size_group_name(SizeGroup g) {
  switch (g) {
    case SizeGroup::Small: return "small";
    case SizeGroup::Middle: return "middle";
    case SizeGroup::Large: return "large";
  }
  return "?";
}

struct KMeansResult {
  std::vector<int> labels;        // cluster index per input, clusters ordered by ascending centroid
  std::vector<double> centroids;  // ascending
  int iterations = 0;
  double sse = 0.0;
};

// Lloyd's algorithm in one dimension, seeded at the (2j+1)/(2k) quantiles.
inline KMeansResult kmeans_1d(const std::vector<double>& values, int k = 3, int max_iters = 100, double tol = 1e-9) {
  if (k < 1) throw InvalidInput("kmeans: k must be >= 1");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = static_cast<int>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  if (distinct < k) throw InvalidInput("kmeans: fewer distinct values than clusters");
  sorted = values;
  std::sort(sorted.begin(), sorted.end());

  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t i = static_cast<std::size_t>(std::floor(pos));
    const std::size_t j = std::min(i + 1, sorted.size() - 1);
    return sorted[i] + (pos - static_cast<double>(i)) * (sorted[j] - sorted[i]);
  };
  KMeansResult r;
  for (int j = 0; j < k; ++j) r.centroids.push_back(quantile((2.0 * j + 1.0) / (2.0 * k)));
  r.labels.assign(values.size(), 0);

  const auto assign = [&] {
    for (std::size_t i = 0; i < values.size(); ++i) {
      int best = 0;
      for (int j = 1; j < k; ++j)
        if (std::abs(values[i] - r.centroids[j]) < std::abs(values[i] - r.centroids[best])) best = j;
      r.labels[i] = best;
    }
  };

  for (r.iterations = 1; r.iterations <= max_iters; ++r.iterations) {
    assign();
    std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
    std::vector<std::size_t> cnt(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      sum[r.labels[i]] += values[i];
      ++cnt[r.labels[i]];
    }
    double shift = 0.0;
    for (int j = 0; j < k; ++j) {
      if (cnt[j] == 0) continue;  // empty cluster keeps its centroid
      const double c = sum[j] / static_cast<double>(cnt[j]);
      shift = std::max(shift, std::abs(c - r.centroids[j]));
      r.centroids[j] = c;
    }
    if (shift < tol) break;
  }
  r.iterations = std::min(r.iterations, max_iters);

  // Relabel so cluster ids follow ascending centroids.
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) { return r.centroids[a] < r.centroids[b]; });
  std::vector<int> rank(static_cast<std::size_t>(k));
  std::vector<double> cents(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    rank[perm[j]] = j;
    cents[j] = r.centroids[perm[j]];
  }
  r.centroids = cents;
  assign();
  r.sse = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - r.centroids[r.labels[i]];
    r.sse += d * d;
  }
  return r;
}

struct SizeGrouping {
  std::vector<SizeGroup> groups;
  std::vector<double> centroids;
  double sse = 0.0;
};

namespace detail {

// Lowest-SSE split of sorted values into three contiguous runs, cuts only
// between distinct values. O(n^2) with prefix sums.
inline KMeansResult best_three_way_split(const std::vector<double>& values) {
  std::vector<double> s = values;
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  std::vector<double> p1(n + 1, 0.0), p2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    p1[i + 1] = p1[i] + s[i];
    p2[i + 1] = p2[i] + s[i] * s[i];
  }
  const auto cost = [&](std::size_t a, std::size_t b) {  // [a,b)
    const double m = static_cast<double>(b - a), t = p1[b] - p1[a];
    return std::max(0.0, (p2[b] - p2[a]) - t * t / m);
  };
  double best = std::numeric_limits<double>::infinity();
  std::size_t bi = 0, bj = 0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (s[i] == s[i - 1]) continue;
    const double left = cost(0, i);
    for (std::size_t j = i + 1; j < n; ++j) {
      if (s[j] == s[j - 1]) continue;
      const double c = left + cost(i, j) + cost(j, n);
      if (c < best) best = c, bi = i, bj = j;
    }
  }
  KMeansResult r;
  r.centroids = {(p1[bi] - p1[0]) / static_cast<double>(bi), (p1[bj] - p1[bi]) / static_cast<double>(bj - bi),
                 (p1[n] - p1[bj]) / static_cast<double>(n - bj)};
  const double t1 = s[bi], t2 = s[bj];  // first value of the middle / top run
  for (double v : values) r.labels.push_back(v < t1 ? 0 : v < t2 ? 1 : 2);
  r.sse = best;
  return r;
}

}  // namespace detail

// Groups box-to-image area ratios into small / middle / large. Lloyd from the
// quantile seeds first; when it stalls in a local optimum the exact contiguous
// split replaces it (the exact optimum is itself a Lloyd fixed point).
inline SizeGrouping kmeans_1d_group(const std::vector<double>& ratios) {
  for (double v : ratios)
    if (!(v > 0.0 && v <= 1.0)) throw InvalidInput("kmeans_1d_group: ratios must be in (0,1]");
  KMeansResult km = kmeans_1d(ratios, 3);
  const KMeansResult exact = detail::best_three_way_split(ratios);
  if (exact.sse < km.sse - 1e-12 * std::max(1.0, km.sse)) km = exact;
  SizeGrouping out;
  out.centroids = km.centroids;
  out.sse = km.sse;
  for (int l : km.labels) out.groups.push_back(static_cast<SizeGroup>(l));
  return out;
}

// ---------------------------------------------------------------------------
// Map comparison
// ---------------------------------------------------------------------------

// Pearson correlation of pixel values.
inline double compare_maps(const SaliencyMap& a, const SaliencyMap& b) {
  if (!a.same_shape(b)) throw InvalidInput("compare_maps: dimensions differ");
  const std::size_t n = a.values.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a.values[i];
    mb += b.values[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.values[i] - ma, db = b.values[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) throw UndefinedMetric("compare_maps: constant map");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Signed difference a - b.
inline Grid<float> error_diff(const SaliencyMap& a, const SaliencyMap& b) {
  if (!a.same_shape(b)) throw InvalidInput("error_diff: dimensions differ");
  Grid<float> d(a.width, a.height);
  for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = a.values[i] - b.values[i];
  return d;
}

}  // namespace dclose
