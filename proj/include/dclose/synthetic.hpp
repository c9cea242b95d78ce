#pragma once

// Synthetic "blob" scenes with a known evidence region, used as a ground
// truth for localization tests and benchmarks.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dclose/core.hpp"
#include "dclose/detector.hpp"
#include "dclose/rng.hpp"

namespace dclose {

struct BlobCase {
  std::string id;
  ImageBuffer image;
  BBox box;  // evidence region == reported box == ground truth
  int size_class = 0;  // 0 small, 1 middle, 2 large (generation intent)
  BlobSpec detector_spec() const { return BlobSpec{box, std::nullopt, {0.05, 0.9, 0.05}, 0.05}; }
};

struct BlobSuiteOptions {
  int width = 96;
  int height = 96;
  int cases_per_group = 10;
  // Side-length ranges per size class (inclusive).
  std::array<std::array<int, 2>, 3> side_range{{{6, 10}, {14, 20}, {26, 34}}};
  std::uint64_t seed = 2023;
};

// Smoothly varying gray-ish texture in roughly [0.2, 0.65].
inline ImageBuffer textured_background(int width, int height, std::uint64_t seed) {
  CounterRng rng(hash_combine({seed, 0x6267ULL}));
  constexpr int kGrid = 7;
  std::array<std::array<std::array<double, 3>, kGrid>, kGrid> knots{};
  for (auto& row : knots)
    for (auto& k : row) {
      const double base = 0.2 + 0.4 * rng.uniform();
      for (double& c : k) c = std::clamp(base + 0.08 * (rng.uniform() - 0.5), 0.0, 1.0);
    }
  ImageBuffer img(width, height);
  for (int y = 0; y < height; ++y) {
    const double gy = static_cast<double>(y) / std::max(1, height - 1) * (kGrid - 1);
    const int y0 = std::min(static_cast<int>(gy), kGrid - 2);
    const double fy = gy - y0;
    for (int x = 0; x < width; ++x) {
      const double gx = static_cast<double>(x) / std::max(1, width - 1) * (kGrid - 1);
      const int x0 = std::min(static_cast<int>(gx), kGrid - 2);
      const double fx = gx - x0;
      const double jitter = 0.04 * (rng.uniform() - 0.5);
      for (int c = 0; c < 3; ++c) {
        const double top = knots[y0][x0][c] * (1 - fx) + knots[y0][x0 + 1][c] * fx;
        const double bot = knots[y0 + 1][x0][c] * (1 - fx) + knots[y0 + 1][x0 + 1][c] * fx;
        img.at(x, y, c) = static_cast<float>(std::clamp(top * (1 - fy) + bot * fy + jitter, 0.0, 1.0));
      }
    }
  }
  return img;
}

inline void paint_box(ImageBuffer& img, const BBox& box, std::array<float, 3> color) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (box.contains_pixel(x, y))
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
}

inline BlobCase make_blob_case(int width, int height, int side, int size_class, std::uint64_t seed) {
  CounterRng rng(hash_combine({seed, 0x626c6f62ULL}));
  const int margin = 2;
  const int max_x = std::max(margin, width - side - margin);
  const int max_y = std::max(margin, height - side - margin);
  const int x0 = margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_x - margin)));
  const int y0 = margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_y - margin)));
  // Bright, saturated colour well separated from the background.
  static constexpr std::array<std::array<float, 3>, 4> kPalette{
      {{1.0f, 0.85f, 0.45f}, {0.55f, 1.0f, 0.85f}, {1.0f, 0.6f, 0.9f}, {0.7f, 0.9f, 1.0f}}};
  BlobCase c;
  c.box = BBox{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + side),
               static_cast<double>(y0 + side)};
  c.size_class = size_class;
  c.image = textured_background(width, height, seed);
  paint_box(c.image, c.box, kPalette[rng.uniform_int(kPalette.size() - 1)]);
  return c;
}

// Three size classes x cases_per_group scenes, ordered small, middle, large.
inline std::vector<BlobCase> make_blob_suite(const BlobSuiteOptions& opt = {}) {
  std::vector<BlobCase> out;
  for (int g = 0; g < 3; ++g)
    for (int i = 0; i < opt.cases_per_group; ++i) {
      const std::uint64_t s = hash_combine({opt.seed, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(i)});
      CounterRng rng(s);
      const auto [lo, hi] = opt.side_range[static_cast<std::size_t>(g)];
      const int side = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo)));
      BlobCase c = make_blob_case(opt.width, opt.height, side, g, s);
      static constexpr const char* kNames[] = {"small", "middle", "large"};
      c.id = std::string(kNames[g]) + "_" + std::to_string(i);
      out.push_back(std::move(c));
    }
  return out;
}

// Target for a blob case: the detector's own response on the clean image.
inline TargetSpec clean_target(Detector& det, const ImageBuffer& img, std::size_t index = 0) {
  const ProposalSet props = det.detect(img);
  if (index >= props.size()) throw InvalidInput("target index out of range");
  return TargetSpec{props[index], std::nullopt};
}

}  // namespace dclose
