#pragma once

// Foundational value types and the small amount of vector/box math every
// other module shares.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dclose {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A metric whose value is mathematically undefined for the given input
// (all-zero map for sparsity, constant map for correlation, ...).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class BackendError : public std::runtime_error {
 public:
  explicit BackendError(const std::string& what, std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(index ? what + " (batch index " + std::to_string(*index) + ")" : what),
        index_(index) {}

  // Position inside a detect_batch call that failed, when known.
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  std::optional<std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Grids and images
// ---------------------------------------------------------------------------

template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> values;  // row-major

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {
    if (w < 0 || h < 0) throw InvalidInput("grid dimensions must be non-negative");
  }
  Grid(int w, int h, std::vector<T> v) : width(w), height(h), values(std::move(v)) {
    if (w < 0 || h < 0 || values.size() != static_cast<std::size_t>(w) * h)
      throw InvalidInput("grid data length does not match dimensions");
  }

  std::size_t size() const noexcept { return values.size(); }
  T& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(int w, int h) const noexcept { return width == w && height == h; }
  template <typename U>
  bool same_shape(const Grid<U>& o) const noexcept { return width == o.width && height == o.height; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using MaskGrid = Grid<float>;

// RGB image with channel values in [0,1], interleaved row-major.
struct ImageBuffer {
  static constexpr int kChannels = 3;

  int width = 0;
  int height = 0;
  std::vector<float> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * kChannels, fill) {
    if (w <= 0 || h <= 0) throw InvalidInput("image dimensions must be positive");
  }
  ImageBuffer(int w, int h, std::vector<float> d) : width(w), height(h), data(std::move(d)) { validate(); }

  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width) * height; }
  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * kChannels + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * kChannels + c]; }

  // Mean over the three channels.
  float brightness(int x, int y) const {
    const float* p = &data[(static_cast<std::size_t>(y) * width + x) * kChannels];
    return (p[0] + p[1] + p[2]) / 3.0f;
  }

  void validate() const {
    if (width <= 0 || height <= 0) throw InvalidInput("image dimensions must be positive");
    if (data.size() != pixel_count() * kChannels) throw InvalidInput("image data length does not match dimensions");
    for (float v : data)
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw InvalidInput("image values must be finite and in [0,1]");
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
  bool valid() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 <= x2 && y1 <= y2;
  }
  // Pixel (x,y) covers [x,x+1)x[y,y+1); it belongs to the box when its
  // center does.
  bool contains_pixel(int x, int y) const noexcept {
    const double cx = x + 0.5, cy = y + 0.5;
    return cx >= x1 && cx <= x2 && cy >= y1 && cy <= y2;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct DetectionVector {
  BBox box;
  double objectness = 1.0;
  std::vector<double> class_scores;

  // Detection confidence in the one-stage convention: objectness times the
  // best class probability.
  double score() const noexcept {
    double best = 0.0;
    for (double s : class_scores) best = std::max(best, s);
    return objectness * best;
  }
  std::size_t best_class() const noexcept {
    return static_cast<std::size_t>(std::max_element(class_scores.begin(), class_scores.end()) - class_scores.begin());
  }

  void validate() const {
    if (!box.valid()) throw InvalidInput("detection box must satisfy x1<=x2, y1<=y2 with finite coordinates");
    if (!(objectness >= 0.0 && objectness <= 1.0)) throw InvalidInput("objectness must be in [0,1]");
    if (class_scores.empty()) throw InvalidInput("class score vector must be non-empty");
    for (double s : class_scores)
      if (!(s >= 0.0 && s <= 1.0)) throw InvalidInput("class scores must be in [0,1]");
  }

  friend bool operator==(const DetectionVector&, const DetectionVector&) = default;
};

using ProposalSet = std::vector<DetectionVector>;

struct TargetSpec {
  DetectionVector target;
  std::optional<std::string> label;
};

// ---------------------------------------------------------------------------
// Saliency maps
// ---------------------------------------------------------------------------

struct SaliencyMap : Grid<float> {
  bool normalized = false;

  SaliencyMap() = default;
  SaliencyMap(int w, int h, float fill = 0.0f) : Grid<float>(w, h, fill) {}
  SaliencyMap(int w, int h, std::vector<float> v, bool norm = false) : Grid<float>(w, h, std::move(v)), normalized(norm) {}

  float max_value() const { return values.empty() ? 0.0f : *std::max_element(values.begin(), values.end()); }
  float min_value() const { return values.empty() ? 0.0f : *std::min_element(values.begin(), values.end()); }
  double sum() const {
    double s = 0.0;
    for (float v : values) s += v;
    return s;
  }
};

enum class FusionOrder { FineToCoarse, CoarseToFine };

struct Ablation {
  bool use_density = true;
  bool use_fusion = true;
};

struct ExplainConfig {
  std::vector<int> segments_per_level{150, 300, 600, 1200, 2400};
  int masks_per_level = 800;
  double fill_probability = 0.5;
  double resize_ratio = 2.2;
  std::uint64_t master_seed = 0;
  Ablation ablation{};
  FusionOrder fusion_order = FusionOrder::FineToCoarse;
  // Min-max normalize every per-level map before the fusion cascade.
  bool normalize_levels = true;

  double slic_compactness = 10.0;
  int slic_max_iters = 10;
  // Proposals with objectness * max class score below this are dropped
  // before scoring.
  double score_floor = 0.05;
  int batch_size = 32;
  // Worker threads used for mask generation/weighting; results do not
  // depend on this value.
  int jobs = 1;

  std::size_t levels() const noexcept { return segments_per_level.size(); }

  void validate() const {
    if (segments_per_level.empty()) throw InvalidInput("at least one segmentation level is required");
    for (int s : segments_per_level)
      if (s < 1) throw InvalidInput("segments per level must be >= 1");
    if (segments_per_level.size() > 1) {
      const bool up = segments_per_level[1] > segments_per_level[0];
      for (std::size_t i = 1; i < segments_per_level.size(); ++i) {
        const bool step_up = segments_per_level[i] > segments_per_level[i - 1];
        if (segments_per_level[i] == segments_per_level[i - 1] || step_up != up)
          throw InvalidInput("segments_per_level must be strictly monotonic");
      }
    }
    if (masks_per_level < 1) throw InvalidInput("masks_per_level must be >= 1");
    if (!(fill_probability >= 0.0 && fill_probability <= 1.0)) throw InvalidInput("fill probability must be in [0,1]");
    if (!(resize_ratio >= 0.0) || !std::isfinite(resize_ratio)) throw InvalidInput("resize ratio must be >= 0");
    if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
    if (jobs < 1) throw InvalidInput("jobs must be >= 1");
    if (slic_max_iters < 0) throw InvalidInput("slic_max_iters must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Math
// ---------------------------------------------------------------------------

inline double iou(const BBox& a, const BBox& b) noexcept {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("cosine: score vectors have different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

inline SaliencyMap minmax_normalize(const SaliencyMap& m) {
  SaliencyMap out(m.width, m.height);
  out.normalized = true;
  if (m.values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(m.values.begin(), m.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  const double span = hi - lo;
  for (std::size_t i = 0; i < m.values.size(); ++i)
    out.values[i] = static_cast<float>((m.values[i] - lo) / span);
  return out;
}

}  // namespace dclose
