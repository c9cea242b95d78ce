#pragma once

// Grid-mask baseline: random coarse occlusion grids weighted by the same
// detection similarity, averaged without density correction or fusion.

#include <cmath>
#include <cstdint>
#include <vector>

#include "dclose/core.hpp"
#include "dclose/detector.hpp"
#include "dclose/maskgen.hpp"
#include "dclose/saliency.hpp"

namespace dclose {

struct GridMaskConfig {
  int grid_h = 16;
  int grid_w = 16;
  double p = 0.5;
  int n = 5000;
  std::uint64_t seed = 0;

  void validate() const {
    if (grid_h < 1 || grid_w < 1) throw InvalidInput("grid resolution must be >= 1");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("grid fill probability must be in [0,1]");
    if (n < 1) throw InvalidInput("grid mask count must be >= 1");
  }
};

// Mask i: Bernoulli(p) on a grid_h x grid_w lattice, bilinearly upsampled to
// (grid_h+1)*cell_h x (grid_w+1)*cell_w, cropped to h x w at an offset inside
// one cell.
class GridMaskGenerator {
 public:
  // Level index used to key the RNG, kept apart from the superpixel levels.
  static constexpr std::uint64_t kRngLevel = 0x67726964ULL;

  GridMaskGenerator(const GridMaskConfig& cfg, int height, int width) : cfg_(cfg), h_(height), w_(width) {
    cfg_.validate();
    if (height <= 0 || width <= 0) throw InvalidInput("grid masks: image dimensions must be positive");
    cell_h_ = (height + cfg.grid_h - 1) / cfg.grid_h;
    cell_w_ = (width + cfg.grid_w - 1) / cfg.grid_w;
    up_h_ = (cfg.grid_h + 1) * cell_h_;
    up_w_ = (cfg.grid_w + 1) * cell_w_;
    tx_ = detail::LinearTaps(cfg.grid_w, up_w_);
    ty_ = detail::LinearTaps(cfg.grid_h, up_h_);
  }

  int cell_height() const noexcept { return cell_h_; }
  int cell_width() const noexcept { return cell_w_; }

  void generate(std::uint64_t index, float* out) const {
    CounterRng rng = mask_rng(cfg_.seed, kRngLevel, index);
    std::vector<std::uint8_t> grid(static_cast<std::size_t>(cfg_.grid_h) * cfg_.grid_w);
    for (auto& b : grid) b = rng.bernoulli(cfg_.p) ? 1 : 0;
    const int off_y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cell_h_ - 1)));
    const int off_x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cell_w_ - 1)));
    detail::resample_window(grid, cfg_.grid_w, tx_, ty_, off_x, off_y, w_, h_, out);
  }

  MaskGrid generate(std::uint64_t index) const {
    MaskGrid m(w_, h_);
    generate(index, m.values.data());
    return m;
  }

 private:
  GridMaskConfig cfg_;
  int h_, w_;
  int cell_h_ = 1, cell_w_ = 1, up_h_ = 1, up_w_ = 1;
  detail::LinearTaps tx_, ty_;
};

inline MaskBatch generate_grid_masks(const GridMaskConfig& cfg, int height, int width) {
  GridMaskGenerator gen(cfg, height, width);
  MaskBatch batch{1, {}, cfg.seed, cfg.p, 0.0};
  batch.masks.reserve(static_cast<std::size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) batch.masks.push_back(gen.generate(static_cast<std::uint64_t>(i)));
  return batch;
}

// Engine knobs (score floor, batching, threads) are taken from `engine`; its
// mask settings are ignored.
inline ExplainResult drise_explain_detailed(const ImageBuffer& img, Detector& det, const TargetSpec& target,
                                            const GridMaskConfig& cfg, const ExplainConfig& engine = {}) {
  cfg.validate();
  detail::check_target(img, det, target);
  const GridMaskGenerator gen(cfg, img.height, img.width);

  ExplainResult result;
  LevelResult level{cfg.grid_h * cfg.grid_w, cfg.grid_h * cfg.grid_w, LevelAccumulator(img.width, img.height)};
  result.detector_calls = detail::weigh_masks(
      img, det, target, engine, static_cast<std::uint64_t>(cfg.n),
      [&](std::uint64_t i, float* out) { gen.generate(i, out); }, level.accumulator, result.times);

  const auto t0 = detail::Clock::now();
  result.saliency = minmax_normalize(finalize_level(level.accumulator, false));
  result.times.fusion += detail::seconds_since(t0);
  result.levels.push_back(std::move(level));
  return result;
}

inline SaliencyMap drise_explain(const ImageBuffer& img, Detector& det, const TargetSpec& target,
                                 const GridMaskConfig& cfg, const ExplainConfig& engine = {}) {
  return drise_explain_detailed(img, det, target, cfg, engine).saliency;
}

}  // namespace dclose
