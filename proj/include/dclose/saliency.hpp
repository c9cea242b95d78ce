#pragma once

// Multi-level superpixel saliency for a single detection target:
// similarity-weighted mask accumulation, density normalization per level, and
// the cascaded add-then-gate fusion across levels.

#include <chrono>
#include <functional>
#include <numeric>
#include <thread>
#include <vector>

#include "dclose/core.hpp"
#include "dclose/detector.hpp"
#include "dclose/maskgen.hpp"
#include "dclose/segmentation.hpp"

namespace dclose {

// IoU(B_p, B_t) * O_p * cos(C_p, C_t)
inline double similarity(const DetectionVector& proposal, const TargetSpec& target) {
  const DetectionVector& t = target.target;
  if (proposal.class_scores.size() != t.class_scores.size())
    throw InvalidInput("similarity: class vectors have different lengths");
  const double overlap = iou(proposal.box, t.box);
  if (overlap == 0.0) return 0.0;
  return overlap * proposal.objectness * cosine(proposal.class_scores, t.class_scores);
}

// Best similarity over all proposals of one masked image; 0 when empty.
inline double mask_weight(const ProposalSet& proposals, const TargetSpec& target, double score_floor = 0.0) {
  double best = 0.0;
  for (const auto& p : proposals) {
    if (p.score() < score_floor) continue;
    best = std::max(best, similarity(p, target));
  }
  return std::clamp(best, 0.0, 1.0);
}

struct LevelAccumulator {
  int width = 0;
  int height = 0;
  std::vector<double> weighted_sum;
  std::vector<double> density;
  std::uint64_t count = 0;

  LevelAccumulator() = default;
  LevelAccumulator(int w, int h)
      : width(w), height(h), weighted_sum(static_cast<std::size_t>(w) * h, 0.0), density(weighted_sum.size(), 0.0) {}

  void add(std::span<const float> mask, double weight) {
    if (mask.size() != density.size()) throw InvalidInput("accumulate: mask dimensions differ");
    if (!(weight >= 0.0 && weight <= 1.0)) throw InvalidInput("accumulate: weight must be in [0,1]");
    for (std::size_t i = 0; i < mask.size(); ++i) {
      density[i] += mask[i];
      weighted_sum[i] += weight * mask[i];
    }
    ++count;
  }

  // Pairwise merge of partial accumulators (associative, commutative up to
  // floating-point rounding).
  void merge(const LevelAccumulator& other) {
    if (other.width != width || other.height != height) throw InvalidInput("merge: accumulator dimensions differ");
    for (std::size_t i = 0; i < density.size(); ++i) {
      density[i] += other.density[i];
      weighted_sum[i] += other.weighted_sum[i];
    }
    count += other.count;
  }
};

inline LevelAccumulator accumulate(LevelAccumulator acc, const MaskGrid& mask, double weight) {
  if (!mask.same_shape(acc.width, acc.height)) throw InvalidInput("accumulate: mask dimensions differ");
  acc.add(mask.values, weight);
  return acc;
}

inline SaliencyMap finalize_level(const LevelAccumulator& acc, bool use_density) {
  if (acc.count == 0) throw InvalidInput("finalize_level: no masks accumulated");
  SaliencyMap out(acc.width, acc.height);
  if (use_density) {
    for (std::size_t i = 0; i < out.values.size(); ++i)
      out.values[i] = acc.density[i] > 0.0 ? static_cast<float>(acc.weighted_sum[i] / acc.density[i]) : 0.0f;
  } else {
    const double n = static_cast<double>(acc.count);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = static_cast<float>(acc.weighted_sum[i] / n);
  }
  return out;
}

struct FusionStack {
  std::vector<SaliencyMap> levels;         // S_1 .. S_L in cascade order
  std::vector<SaliencyMap> intermediates;  // A_1 .. A_{L-1}, filled by fuse()
};

// A_1 = (S_1 + S_2) * S_2, A_k = (A_{k-1} + S_{k+1}) * S_{k+1}; returns the
// min-max normalized A_{L-1} (or S_1 when there is a single level).
inline SaliencyMap fuse(FusionStack& stack) {
  if (stack.levels.empty()) throw InvalidInput("fuse: empty stack");
  const int w = stack.levels.front().width, h = stack.levels.front().height;
  for (const auto& s : stack.levels)
    if (!s.same_shape(w, h)) throw InvalidInput("fuse: level maps have different dimensions");
  stack.intermediates.clear();
  if (stack.levels.size() == 1) return minmax_normalize(stack.levels.front());

  std::vector<double> acc(stack.levels.front().values.begin(), stack.levels.front().values.end());
  for (std::size_t k = 1; k < stack.levels.size(); ++k) {
    const auto& next = stack.levels[k].values;
    SaliencyMap a(w, h);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      acc[i] = (acc[i] + next[i]) * next[i];
      a.values[i] = static_cast<float>(acc[i]);
    }
    stack.intermediates.push_back(std::move(a));
  }
  return minmax_normalize(stack.intermediates.back());
}

inline SaliencyMap fuse(const std::vector<SaliencyMap>& levels) {
  FusionStack stack{levels, {}};
  return fuse(stack);
}

// ---------------------------------------------------------------------------
// End-to-end
// ---------------------------------------------------------------------------

struct StageTimes {
  double segmentation = 0.0;
  double masking = 0.0;
  double detection = 0.0;
  double accumulation = 0.0;
  double fusion = 0.0;

  double total() const noexcept { return segmentation + masking + detection + accumulation + fusion; }
};

struct LevelResult {
  int segments_requested = 0;
  int segments_actual = 0;
  LevelAccumulator accumulator;
};

struct ExplainResult {
  SaliencyMap saliency;
  std::vector<LevelResult> levels;  // configuration order
  std::uint64_t detector_calls = 0;
  StageTimes times;
};

struct LevelProgress {
  std::size_t level = 0;  // 0-based, configuration order
  std::size_t levels = 0;
  int segments_actual = 0;
  std::uint64_t detector_calls = 0;
};

using ProgressFn = std::function<void(const LevelProgress&)>;

namespace detail {

using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline void check_target(const ImageBuffer& img, const Detector& det, const TargetSpec& target) {
  img.validate();
  target.target.validate();
  // A remote detector may not know its class count before its first reply.
  if (det.num_classes() != 0 && target.target.class_scores.size() != det.num_classes())
    throw InvalidInput("target class vector length does not match the detector's class count");
}

// Runs the detector over masks [begin, end) produced by `make_mask` and adds
// them to `acc` in index order. Returns the number of detector calls.
template <typename MakeMask>
std::uint64_t weigh_masks(const ImageBuffer& img, Detector& det, const TargetSpec& target, const ExplainConfig& cfg,
                          std::uint64_t total, MakeMask&& make_mask, LevelAccumulator& acc, StageTimes& times) {
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t npix = img.pixel_count();
  std::vector<float> masks(batch * npix);
  std::vector<ImageBuffer> masked(batch);
  std::vector<double> weights(batch);
  std::uint64_t calls = 0;
  const int jobs = std::max(1, cfg.jobs);

  const auto parallel_for = [&](std::size_t n, auto&& fn) {
    if (jobs == 1 || n < 2) {
      for (std::size_t j = 0; j < n; ++j) fn(j);
      return;
    }
    std::vector<std::thread> pool;
    const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    for (std::size_t t = 0; t < nt; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t j = t; j < n; j += nt) fn(j);
      });
    for (auto& th : pool) th.join();
  };

  for (std::uint64_t begin = 0; begin < total; begin += batch) {
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(batch, total - begin));

    auto t0 = Clock::now();
    parallel_for(n, [&](std::size_t j) {
      float* m = &masks[j * npix];
      make_mask(begin + j, m);
      apply_mask(img, std::span<const float>(m, npix), masked[j]);
    });
    times.masking += seconds_since(t0);

    t0 = Clock::now();
    const std::span<const ImageBuffer> view(masked.data(), n);
    if (jobs > 1 && det.concurrent_safe()) {
      std::vector<ProposalSet> props(n);
      parallel_for(n, [&](std::size_t j) { props[j] = det.detect(masked[j]); });
      for (std::size_t j = 0; j < n; ++j) weights[j] = mask_weight(props[j], target, cfg.score_floor);
    } else {
      const auto props = det.detect_batch(view);
      if (props.size() != n) throw BackendError("detector returned a batch of the wrong size");
      for (std::size_t j = 0; j < n; ++j) weights[j] = mask_weight(props[j], target, cfg.score_floor);
    }
    calls += n;
    times.detection += seconds_since(t0);

    t0 = Clock::now();
    for (std::size_t j = 0; j < n; ++j) acc.add(std::span<const float>(&masks[j * npix], npix), weights[j]);
    times.accumulation += seconds_since(t0);
  }
  return calls;
}

}  // namespace detail

// Builds the final map from per-level accumulators under the given ablation
// settings. Lets one set of detector responses serve several ablation rows.
inline SaliencyMap compose_saliency(const std::vector<LevelResult>& levels, const ExplainConfig& cfg,
                                    FusionStack* stack_out = nullptr) {
  if (levels.empty()) throw InvalidInput("compose_saliency: no levels");
  std::vector<std::size_t> order(levels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Cascade order: finest (most segments) first, unless flipped.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cfg.fusion_order == FusionOrder::FineToCoarse ? levels[a].segments_requested > levels[b].segments_requested
                                                         : levels[a].segments_requested < levels[b].segments_requested;
  });

  FusionStack stack;
  for (std::size_t i : order) {
    SaliencyMap s = finalize_level(levels[i].accumulator, cfg.ablation.use_density);
    stack.levels.push_back(cfg.normalize_levels ? minmax_normalize(s) : std::move(s));
  }

  SaliencyMap out;
  if (cfg.ablation.use_fusion) {
    out = fuse(stack);
  } else {
    SaliencyMap mean(stack.levels.front().width, stack.levels.front().height);
    std::vector<double> sum(mean.values.size(), 0.0);
    for (const auto& s : stack.levels)
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += s.values[i];
    for (std::size_t i = 0; i < sum.size(); ++i)
      mean.values[i] = static_cast<float>(sum[i] / static_cast<double>(stack.levels.size()));
    out = minmax_normalize(mean);
  }
  if (stack_out) *stack_out = std::move(stack);
  return out;
}

inline ExplainResult explain_detailed(const ImageBuffer& img, Detector& det, const TargetSpec& target,
                                      const ExplainConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  detail::check_target(img, det, target);

  ExplainResult result;
  const std::size_t L = cfg.levels();
  for (std::size_t k = 0; k < L; ++k) {
    auto t0 = detail::Clock::now();
    const SegmentationMap seg =
        slic_segment(img, cfg.segments_per_level[k], SlicOptions{cfg.slic_compactness, cfg.slic_max_iters});
    result.times.segmentation += detail::seconds_since(t0);

    const SegmentMaskGenerator gen(seg, cfg.fill_probability, cfg.resize_ratio, cfg.master_seed,
                                   static_cast<int>(k + 1));
    LevelResult level{cfg.segments_per_level[k], seg.n_actual, LevelAccumulator(img.width, img.height)};
    result.detector_calls += detail::weigh_masks(
        img, det, target, cfg, static_cast<std::uint64_t>(cfg.masks_per_level),
        [&](std::uint64_t i, float* out) { gen.generate(i, out); }, level.accumulator, result.times);
    result.levels.push_back(std::move(level));
    if (progress) progress({k, L, seg.n_actual, result.detector_calls});
  }

  const auto t0 = detail::Clock::now();
  result.saliency = compose_saliency(result.levels, cfg);
  result.times.fusion += detail::seconds_since(t0);
  return result;
}

inline SaliencyMap explain(const ImageBuffer& img, Detector& det, const TargetSpec& target, const ExplainConfig& cfg) {
  return explain_detailed(img, det, target, cfg).saliency;
}

// Detector calls an explanation will issue: one per mask per level.
inline std::uint64_t planned_detector_calls(const ExplainConfig& cfg) {
  return static_cast<std::uint64_t>(cfg.levels()) * static_cast<std::uint64_t>(cfg.masks_per_level);
}

}  // namespace dclose
