#pragma once

// Perturbation masks. A mask is a binary fill (one Bernoulli bit per
// superpixel, or per coarse grid cell for the grid variant), bilinearly
// upsampled with half-pixel-center alignment and cropped back to the image
// size at a random integer offset.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "dclose/core.hpp"
#include "dclose/rng.hpp"
#include "dclose/segmentation.hpp"

namespace dclose {

namespace detail {

// Precomputed 1-D bilinear taps for resampling `src` samples onto `dst`
// samples with half-pixel centers: s = (d + 0.5) * src / dst - 0.5.
struct LinearTaps {
  std::vector<int> lo, hi;
  std::vector<float> frac;

  LinearTaps() = default;
  LinearTaps(int src, int dst) : lo(dst), hi(dst), frac(dst) {
    const double scale = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
      double s = (d + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(src - 1));
      const int i0 = static_cast<int>(std::floor(s));
      const int i1 = std::min(i0 + 1, src - 1);
      lo[d] = i0;
      hi[d] = i1;
      frac[d] = static_cast<float>(s - i0);
    }
  }
};

// Bilinear sample of a small binary grid at the window starting at
// (off_x, off_y) of the upsampled lattice.
inline void resample_window(const std::vector<std::uint8_t>& src, int src_w, const LinearTaps& tx,
                            const LinearTaps& ty, int off_x, int off_y, int out_w, int out_h, float* out) {
  for (int y = 0; y < out_h; ++y) {
    const int Y = y + off_y;
    const std::uint8_t* r0 = &src[static_cast<std::size_t>(ty.lo[Y]) * src_w];
    const std::uint8_t* r1 = &src[static_cast<std::size_t>(ty.hi[Y]) * src_w];
    const float fy = ty.frac[Y];
    for (int x = 0; x < out_w; ++x) {
      const int X = x + off_x;
      const float fx = tx.frac[X];
      const float top = r0[tx.lo[X]] + fx * (r0[tx.hi[X]] - r0[tx.lo[X]]);
      const float bot = r1[tx.lo[X]] + fx * (r1[tx.hi[X]] - r1[tx.lo[X]]);
      const float v = top + fy * (bot - top);
      out[static_cast<std::size_t>(y) * out_w + x] = std::clamp(v, 0.0f, 1.0f);
    }
  }
}

inline int upsampled_extent(int n, double r) { return static_cast<int>(std::floor((r + 1.0) * n)); }

}  // namespace detail

struct MaskBatch {
  int level_index = 1;  // 1-based
  std::vector<MaskGrid> masks;
  std::uint64_t seed = 0;
  double fill_probability = 0.5;
  double resize_ratio = 0.0;
};

// Generates superpixel masks one at a time; mask i depends only on
// (seed, level, i), never on the masks before it.
class SegmentMaskGenerator {
 public:
  SegmentMaskGenerator(const SegmentationMap& seg, double p, double r, std::uint64_t seed, int level_index = 1)
      : seg_(&seg), p_(p), r_(r), seed_(seed), level_(level_index) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("fill probability must be in [0,1]");
    if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidInput("resize ratio must be >= 0");
    if (seg.width <= 0 || seg.height <= 0 || seg.n_actual < 1) throw InvalidInput("invalid segmentation map");
    up_w_ = std::max(seg.width, detail::upsampled_extent(seg.width, r));
    up_h_ = std::max(seg.height, detail::upsampled_extent(seg.height, r));
    tx_ = detail::LinearTaps(seg.width, up_w_);
    ty_ = detail::LinearTaps(seg.height, up_h_);
  }

  int width() const noexcept { return seg_->width; }
  int height() const noexcept { return seg_->height; }
  int upsampled_width() const noexcept { return up_w_; }
  int upsampled_height() const noexcept { return up_h_; }

  // Writes mask `index` into out (width*height floats).
  void generate(std::uint64_t index, float* out) const {
    CounterRng rng = mask_rng(seed_, static_cast<std::uint64_t>(level_), index);
    std::vector<std::uint8_t> on(static_cast<std::size_t>(seg_->n_actual));
    for (auto& b : on) b = rng.bernoulli(p_) ? 1 : 0;
    // Valid crop offsets are [0, up - size].
    const int off_y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(up_h_ - seg_->height)));
    const int off_x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(up_w_ - seg_->width)));
    std::vector<std::uint8_t> fill(seg_->labels.size());
    for (std::size_t i = 0; i < fill.size(); ++i) fill[i] = on[static_cast<std::size_t>(seg_->labels[i])];
    detail::resample_window(fill, seg_->width, tx_, ty_, off_x, off_y, seg_->width, seg_->height, out);
  }

  MaskGrid generate(std::uint64_t index) const {
    MaskGrid m(seg_->width, seg_->height);
    generate(index, m.values.data());
    return m;
  }

 private:
  const SegmentationMap* seg_;
  double p_, r_;
  std::uint64_t seed_;
  int level_;
  int up_w_ = 0, up_h_ = 0;
  detail::LinearTaps tx_, ty_;
};

inline MaskBatch generate_masks(const SegmentationMap& seg, int n, double p, double r, std::uint64_t seed,
                                int level_index = 1) {
  if (n < 0) throw InvalidInput("mask count must be non-negative");
  SegmentMaskGenerator gen(seg, p, r, seed, level_index);
  MaskBatch batch{level_index, {}, seed, p, r};
  batch.masks.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) batch.masks.push_back(gen.generate(static_cast<std::uint64_t>(i)));
  return batch;
}

inline void apply_mask(const ImageBuffer& img, std::span<const float> mask, ImageBuffer& out) {
  if (mask.size() != img.pixel_count()) throw InvalidInput("apply_mask: mask and image dimensions differ");
  out.width = img.width;
  out.height = img.height;
  out.data.resize(img.data.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const float m = mask[i];
    out.data[3 * i] = img.data[3 * i] * m;
    out.data[3 * i + 1] = img.data[3 * i + 1] * m;
    out.data[3 * i + 2] = img.data[3 * i + 2] * m;
  }
}

inline ImageBuffer apply_mask(const ImageBuffer& img, const MaskGrid& m) {
  if (!m.same_shape(img.width, img.height)) throw InvalidInput("apply_mask: mask and image dimensions differ");
  ImageBuffer out;
  apply_mask(img, m.values, out);
  return out;
}

// Debug dump of one mask as a binary PGM (8-bit grayscale).
inline void write_mask_pgm(std::ostream& os, const MaskGrid& m) {
  os << "P5\n" << m.width << ' ' << m.height << "\n255\n";
  for (float v : m.values) os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
}

}  // namespace dclose
