#pragma once

// Colormaps and overlays for saliency visualisation. Output images are 8-bit
// RGB, row-major.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dclose/core.hpp"

namespace dclose {

struct Rgb8Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // RGB interleaved

  Rgb8Image() = default;
  Rgb8Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}
};

using Rgb = std::array<double, 3>;

// Viridis, 6th-degree polynomial fit of the matplotlib table.
inline Rgb viridis(double t) {
  t = std::clamp(t, 0.0, 1.0);
  static constexpr Rgb c0{0.2777273272234177, 0.005407344544966578, 0.3340998053353061};
  static constexpr Rgb c1{0.1050930431085774, 1.404613529898575, 1.384590162594685};
  static constexpr Rgb c2{-0.3308618287255563, 0.214847559468213, 0.09509516302823659};
  static constexpr Rgb c3{-4.634230498983486, -5.799100973351585, -19.33244095627987};
  static constexpr Rgb c4{6.228269936347081, 14.17993336680509, 56.69055260068105};
  static constexpr Rgb c5{4.776384997670288, -13.74514537774601, -65.35303263337234};
  static constexpr Rgb c6{-5.435455855934631, 4.645852612178535, 26.3124352495832};
  Rgb out{};
  for (int i = 0; i < 3; ++i)
    out[i] = std::clamp(c0[i] + t * (c1[i] + t * (c2[i] + t * (c3[i] + t * (c4[i] + t * (c5[i] + t * c6[i]))))),
                        0.0, 1.0);
  return out;
}

// Blue - white - red, t in [-1, 1].
inline Rgb diverging(double t) {
  t = std::clamp(t, -1.0, 1.0);
  static constexpr Rgb kBlue{0.230, 0.299, 0.754};
  static constexpr Rgb kWhite{0.865, 0.865, 0.865};
  static constexpr Rgb kRed{0.706, 0.016, 0.150};
  const Rgb& end = t < 0 ? kBlue : kRed;
  const double a = std::abs(t);
  return {kWhite[0] + a * (end[0] - kWhite[0]), kWhite[1] + a * (end[1] - kWhite[1]),
          kWhite[2] + a * (end[2] - kWhite[2])};
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline Rgb8Image to_rgb8(const ImageBuffer& img) {
  Rgb8Image out(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = to_byte(img.data[i]);
  return out;
}

inline ImageBuffer from_rgb8(const Rgb8Image& img) {
  ImageBuffer out(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = static_cast<float>(img.data[i] / 255.0);
  return out;
}

// Sequential heatmap of a map with values in [0,1].
inline Rgb8Image render_heatmap(const Grid<float>& m) {
  Rgb8Image out(m.width, m.height);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const Rgb c = viridis(m.values[i]);
    for (int k = 0; k < 3; ++k) out.data[3 * i + k] = to_byte(c[k]);
  }
  return out;
}

// Diverging heatmap of a signed grid, symmetric around zero. `scale` is the
// magnitude mapped to full saturation; 0 picks the grid's max |value|.
inline Rgb8Image render_diverging(const Grid<float>& d, double scale = 0.0) {
  if (scale <= 0.0)
    for (float v : d.values) scale = std::max(scale, static_cast<double>(std::abs(v)));
  if (scale <= 0.0) scale = 1.0;
  Rgb8Image out(d.width, d.height);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const Rgb c = diverging(d.values[i] / scale);
    for (int k = 0; k < 3; ++k) out.data[3 * i + k] = to_byte(c[k]);
  }
  return out;
}

// out = (1 - alpha) * image + alpha * color
inline Rgb8Image blend(const ImageBuffer& img, const Rgb8Image& color, double alpha = 0.5) {
  if (img.width != color.width || img.height != color.height) throw InvalidInput("blend: dimensions differ");
  Rgb8Image out(img.width, img.height);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = to_byte((1.0 - alpha) * img.data[i] + alpha * (color.data[i] / 255.0));
  return out;
}

inline Rgb8Image render_overlay(const ImageBuffer& img, const Grid<float>& m, double alpha = 0.5) {
  return blend(img, render_heatmap(m), alpha);
}

inline Rgb8Image render_diff_overlay(const ImageBuffer& img, const Grid<float>& d, double alpha = 0.5) {
  return blend(img, render_diverging(d), alpha);
}

// One-pixel rectangle outline, clipped to the image.
inline void draw_box(Rgb8Image& img, const BBox& b, std::array<std::uint8_t, 3> color) {
  const int x0 = std::clamp(static_cast<int>(std::floor(b.x1)), 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(b.y1)), 0, img.height - 1);
  const int x1 = std::clamp(static_cast<int>(std::ceil(b.x2)) - 1, 0, img.width - 1);
  const int y1 = std::clamp(static_cast<int>(std::ceil(b.y2)) - 1, 0, img.height - 1);
  const auto put = [&](int x, int y) {
    for (int k = 0; k < 3; ++k) img.data[(static_cast<std::size_t>(y) * img.width + x) * 3 + k] = color[k];
  };
  for (int x = x0; x <= x1; ++x) {
    put(x, y0);
    put(x, y1);
  }
  for (int y = y0; y <= y1; ++y) {
    put(x0, y);
    put(x1, y);
  }
}

}  // namespace dclose
