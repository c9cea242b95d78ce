#pragma once

// SLIC superpixels: grid-seeded local k-means in CIELAB + position space,
// followed by a connectivity pass that turns every label into a single
// 4-connected region.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "dclose/core.hpp"

namespace dclose {

struct SegmentationMap {
  int width = 0;
  int height = 0;
  std::vector<int> labels;  // row-major, values in [0, n_actual)
  int n_requested = 0;
  int n_actual = 0;

  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  // Pixel indices grouped by label.
  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(n_actual));
    for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
    return out;
  }

  std::vector<std::size_t> areas() const {
    std::vector<std::size_t> out(static_cast<std::size_t>(n_actual), 0);
    for (int l : labels) ++out[static_cast<std::size_t>(l)];
    return out;
  }
};

struct SlicOptions {
  double compactness = 10.0;
  int max_iters = 10;
};

namespace detail {

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
  constexpr double eps = 216.0 / 24389.0;
  constexpr double kappa = 24389.0 / 27.0;
  return t > eps ? std::cbrt(t) : (kappa * t + 16.0) / 116.0;
}

// sRGB in [0,1] -> CIELAB (D65 white).
inline std::array<double, 3> rgb_to_lab(double r, double g, double b) {
  r = srgb_to_linear(r);
  g = srgb_to_linear(g);
  b = srgb_to_linear(b);
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / 1.00000;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  const double fx = lab_f(x), fy = lab_f(y), fz = lab_f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// Splits every label into its 4-connected components, merges components
// smaller than min_size into their largest neighbour, and relabels in raster
// order of first appearance.
inline int enforce_connectivity(std::vector<int>& labels, int width, int height, std::size_t min_size) {
  const std::size_t n = labels.size();
  std::vector<int> comp(n, -1);
  std::vector<std::size_t> comp_size;
  std::vector<std::size_t> stack;
  int ncomp = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    const int lab = labels[start];
    std::size_t count = 0;
    comp[start] = ncomp;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++count;
      const int x = static_cast<int>(p % width), y = static_cast<int>(p / width);
      const auto visit = [&](int nx, int ny) {
        if (nx < 0 || ny < 0 || nx >= width || ny >= height) return;
        const std::size_t q = static_cast<std::size_t>(ny) * width + nx;
        if (comp[q] < 0 && labels[q] == lab) {
          comp[q] = ncomp;
          stack.push_back(q);
        }
      };
      visit(x - 1, y);
      visit(x + 1, y);
      visit(x, y - 1);
      visit(x, y + 1);
    }
    comp_size.push_back(count);
    ++ncomp;
  }

  // Union-find over components so merges compose.
  std::vector<int> parent(static_cast<std::size_t>(ncomp));
  std::iota(parent.begin(), parent.end(), 0);
  const auto find = [&](int c) {
    while (parent[c] != c) {
      parent[c] = parent[parent[c]];
      c = parent[c];
    }
    return c;
  };
  std::vector<std::size_t> size = comp_size;

  // Adjacency between components.
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(ncomp));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * width + x;
      if (x + 1 < width && comp[p] != comp[p + 1]) {
        adj[comp[p]].push_back(comp[p + 1]);
        adj[comp[p + 1]].push_back(comp[p]);
      }
      if (y + 1 < height && comp[p] != comp[p + width]) {
        adj[comp[p]].push_back(comp[p + width]);
        adj[comp[p + width]].push_back(comp[p]);
      }
    }
  }
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }

  // Smallest fragments first; ties in raster order.
  std::vector<int> order(static_cast<std::size_t>(ncomp));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return comp_size[a] < comp_size[b]; });
  for (int c : order) {
    const int root = find(c);
    if (root != c || size[root] >= min_size) continue;
    int best = -1;
    std::size_t best_size = 0;
    for (int nb : adj[c]) {
      const int r = find(nb);
      if (r == root) continue;
      if (best < 0 || size[r] > best_size || (size[r] == best_size && r < best)) {
        best = r;
        best_size = size[r];
      }
    }
    if (best < 0) continue;
    parent[root] = best;
    size[best] += size[root];
    // The merged fragment's neighbours become the target's neighbours.
    adj[best].insert(adj[best].end(), adj[c].begin(), adj[c].end());
  }

  std::vector<int> remap(static_cast<std::size_t>(ncomp), -1);
  int next = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const int r = find(comp[p]);
    if (remap[r] < 0) remap[r] = next++;
    labels[p] = remap[r];
  }
  return next;
}

}  // namespace detail

inline SegmentationMap slic_segment(const ImageBuffer& img, int n_segments, const SlicOptions& opt = {}) {
  const int w = img.width, h = img.height;
  const std::size_t npix = img.pixel_count();
  if (n_segments < 1) throw InvalidInput("slic: n_segments must be >= 1");
  if (static_cast<std::size_t>(n_segments) > npix) throw InvalidInput("slic: n_segments exceeds pixel count");

  SegmentationMap seg;
  seg.width = w;
  seg.height = h;
  seg.n_requested = n_segments;
  if (n_segments == 1) {
    seg.labels.assign(npix, 0);
    seg.n_actual = 1;
    return seg;
  }

  std::vector<std::array<double, 3>> lab(npix);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      lab[static_cast<std::size_t>(y) * w + x] = detail::rgb_to_lab(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));

  const double step = std::sqrt(static_cast<double>(npix) / n_segments);
  const int ny = std::clamp(static_cast<int>(std::lround(h / step)), 1, h);
  const int nx = std::clamp(static_cast<int>(std::lround(w / step)), 1, w);
  const double sy = static_cast<double>(h) / ny, sx = static_cast<double>(w) / nx;

  const auto gradient = [&](int x, int y) {
    if (x <= 0 || y <= 0 || x >= w - 1 || y >= h - 1) return std::numeric_limits<double>::infinity();
    double g = 0.0;
    const auto& l = lab[static_cast<std::size_t>(y) * w + x - 1];
    const auto& r = lab[static_cast<std::size_t>(y) * w + x + 1];
    const auto& u = lab[static_cast<std::size_t>(y - 1) * w + x];
    const auto& d = lab[static_cast<std::size_t>(y + 1) * w + x];
    for (int c = 0; c < 3; ++c) g += (r[c] - l[c]) * (r[c] - l[c]) + (d[c] - u[c]) * (d[c] - u[c]);
    return g;
  };

  struct Center {
    double l, a, b, x, y;
  };
  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double cx = (i + 0.5) * sx - 0.5, cy = (j + 0.5) * sy - 0.5;
      int px = std::clamp(static_cast<int>(std::lround(cx)), 0, w - 1);
      int py = std::clamp(static_cast<int>(std::lround(cy)), 0, h - 1);
      // Move the seed to the lowest-gradient pixel of its 3x3 neighbourhood.
      if (step >= 3.0) {
        double best = gradient(px, py);
        int bx = px, by = py;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const double g = gradient(px + dx, py + dy);
            if (g < best) {
              best = g;
              bx = px + dx;
              by = py + dy;
            }
          }
        if (bx != px || by != py) {
          px = bx;
          py = by;
        }
      }
      const bool moved = std::abs(px - cx) > 0.5 || std::abs(py - cy) > 0.5;
      const auto& c = lab[static_cast<std::size_t>(py) * w + px];
      centers.push_back({c[0], c[1], c[2], moved ? px : cx, moved ? py : cy});
    }
  }

  const std::size_t k = centers.size();
  const double spatial = opt.compactness / step;
  const int window = static_cast<int>(std::ceil(step));
  std::vector<int> labels(npix, 0);
  std::vector<double> dist(npix);

  const auto assign = [&]() {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t ci = 0; ci < k; ++ci) {
      const Center& c = centers[ci];
      const int x0 = std::max(0, static_cast<int>(std::floor(c.x - window)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(c.x + window)));
      const int y0 = std::max(0, static_cast<int>(std::floor(c.y - window)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(c.y + window)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          const auto& v = lab[p];
          const double dc = std::sqrt((v[0] - c.l) * (v[0] - c.l) + (v[1] - c.a) * (v[1] - c.a) +
                                      (v[2] - c.b) * (v[2] - c.b));
          const double ds = std::sqrt((x - c.x) * (x - c.x) + (y - c.y) * (y - c.y));
          const double d = dc + spatial * ds;
          // Strict comparison: the lowest center index wins ties.
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = static_cast<int>(ci);
          }
        }
      }
    }
    // Pixels outside every window (possible for very uneven seeds) go to the
    // nearest center in position.
    for (std::size_t p = 0; p < npix; ++p) {
      if (std::isfinite(dist[p])) continue;
      const double x = static_cast<double>(p % w), y = static_cast<double>(p / w);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t ci = 0; ci < k; ++ci) {
        const double d = (x - centers[ci].x) * (x - centers[ci].x) + (y - centers[ci].y) * (y - centers[ci].y);
        if (d < best) {
          best = d;
          labels[p] = static_cast<int>(ci);
        }
      }
    }
  };

  for (int iter = 0; iter < opt.max_iters; ++iter) {
    assign();
    std::vector<std::array<double, 6>> acc(k, std::array<double, 6>{});
    for (std::size_t p = 0; p < npix; ++p) {
      auto& a = acc[static_cast<std::size_t>(labels[p])];
      a[0] += lab[p][0];
      a[1] += lab[p][1];
      a[2] += lab[p][2];
      a[3] += static_cast<double>(p % w);
      a[4] += static_cast<double>(p / w);
      a[5] += 1.0;
    }
    for (std::size_t ci = 0; ci < k; ++ci) {
      if (acc[ci][5] == 0.0) continue;
      const double inv = 1.0 / acc[ci][5];
      centers[ci] = {acc[ci][0] * inv, acc[ci][1] * inv, acc[ci][2] * inv, acc[ci][3] * inv, acc[ci][4] * inv};
    }
  }
  assign();

  const std::size_t min_size = static_cast<std::size_t>(static_cast<double>(npix) / n_segments / 4.0);
  seg.n_actual = detail::enforce_connectivity(labels, w, h, std::max<std::size_t>(min_size, 1));
  seg.labels = std::move(labels);
  return seg;
}

inline SegmentationMap slic_segment(const ImageBuffer& img, int n_segments, double compactness, int max_iters) {
  return slic_segment(img, n_segments, SlicOptions{compactness, max_iters});
}

// Debug export: one CSV row per image row.
inline void write_label_csv(std::ostream& os, const SegmentationMap& seg) {
  for (int y = 0; y < seg.height; ++y) {
    for (int x = 0; x < seg.width; ++x) {
      if (x) os << ',';
      os << seg.at(x, y);
    }
    os << '\n';
  }
}

}  // namespace dclose
