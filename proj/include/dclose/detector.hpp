#pragma once

// The detector boundary. The engine only ever sees "image in, proposals out";
// anything model-specific lives behind a Detector implementation.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dclose/core.hpp"
#include "dclose/rng.hpp"

namespace dclose {

class Detector {
 public:
  virtual ~Detector() = default;

  virtual ProposalSet detect(const ImageBuffer& img) = 0;

  // Element-wise detect, order preserved. A failure on image j is reported
  // as a BackendError carrying j.
  virtual std::vector<ProposalSet> detect_batch(std::span<const ImageBuffer> imgs) {
    if (imgs.empty()) throw InvalidInput("detect_batch: empty batch");
    std::vector<ProposalSet> out;
    out.reserve(imgs.size());
    for (std::size_t j = 0; j < imgs.size(); ++j) {
      try {
        out.push_back(detect(imgs[j]));
      } catch (const BackendError& e) {
        if (e.index()) throw;
        throw BackendError(e.what(), j);
      } catch (const std::exception& e) {
        throw BackendError(e.what(), j);
      }
    }
    return out;
  }

  virtual std::size_t num_classes() const = 0;
  virtual std::vector<std::string> class_names() const { return {}; }

  // True when detect() may be called from several threads at once.
  virtual bool concurrent_safe() const { return false; }

  // Human-readable backend description, recorded in run manifests.
  virtual std::string descriptor() const = 0;
};

using DetectorHandle = std::shared_ptr<Detector>;

inline ProposalSet detect(Detector& det, const ImageBuffer& img) { return det.detect(img); }
inline std::vector<ProposalSet> detect_batch(Detector& det, std::span<const ImageBuffer> imgs) {
  return det.detect_batch(imgs);
}

// ---------------------------------------------------------------------------
// Synthetic detectors
// ---------------------------------------------------------------------------

struct BlobSpec {
  BBox box;                      // reported detection box
  std::optional<BBox> evidence;  // region that drives the response; defaults to box
  std::vector<double> class_profile{0.05, 0.9, 0.05};
  double threshold = 0.05;  // proposals with objectness below this are suppressed

  const BBox& evidence_region() const { return evidence ? *evidence : box; }
};

// Emits one proposal at a fixed box. Its objectness is the mean brightness of
// the (possibly masked) image inside the evidence region, and the class
// scores are the profile scaled by that brightness.
class BlobDetector final : public Detector {
 public:
  explicit BlobDetector(BlobSpec spec) : spec_(std::move(spec)) {
    if (!spec_.box.valid() || !spec_.evidence_region().valid()) throw InvalidInput("blob detector: invalid region");
    if (spec_.class_profile.empty()) throw InvalidInput("blob detector: empty class profile");
    for (double p : spec_.class_profile)
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("blob detector: profile values must be in [0,1]");
  }

  double evidence_brightness(const ImageBuffer& img) const {
    const BBox& r = spec_.evidence_region();
    const int x0 = std::max(0, static_cast<int>(std::floor(r.x1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(r.y1)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(r.x2)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(r.y2)));
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (r.contains_pixel(x, y)) {
          sum += img.brightness(x, y);
          ++n;
        }
    return n ? std::clamp(sum / static_cast<double>(n), 0.0, 1.0) : 0.0;
  }

  ProposalSet detect(const ImageBuffer& img) override {
    const double b = evidence_brightness(img);
    if (b < spec_.threshold || b <= 0.0) return {};
    DetectionVector d;
    d.box = spec_.box;
    d.objectness = b;
    d.class_scores.reserve(spec_.class_profile.size());
    for (double p : spec_.class_profile) d.class_scores.push_back(p * b);
    return {std::move(d)};
  }

  std::size_t num_classes() const override { return spec_.class_profile.size(); }
  bool concurrent_safe() const override { return true; }
  std::string descriptor() const override {
    const BBox& b = spec_.box;
    return "synthetic:blob@" + fmt_num(b.x1) + "," + fmt_num(b.y1) + "," + fmt_num(b.x2) + "," + fmt_num(b.y2);
  }

  const BlobSpec& spec() const noexcept { return spec_; }

 private:
  static std::string fmt_num(double v) {
    if (v == std::floor(v)) return std::to_string(static_cast<long long>(v));
    return std::to_string(v);
  }

  BlobSpec spec_;
};

inline DetectorHandle make_blob_detector(BlobSpec spec) { return std::make_shared<BlobDetector>(std::move(spec)); }

// Stand-in for a model with randomized weights: the base detector is shown a
// cyclically shifted copy of the image, so its response is driven by the
// content of a different region. The shift is derived from the seed and lies
// in [w/2 - w/8, w/2 + w/8] on each axis (same for y), which keeps the
// borrowed region disjoint from the original for evidence regions up to
// 3w/8 wide.
class RandomizedDetector final : public Detector {
 public:
  RandomizedDetector(DetectorHandle base, std::uint64_t seed) : base_(std::move(base)), seed_(seed) {
    if (!base_) throw InvalidInput("randomized detector: null base");
  }

  // Shift (dx, dy) applied for an image of the given size: the randomized
  // view at pixel (x,y) shows the original pixel ((x+dx) mod w, (y+dy) mod h).
  std::pair<int, int> shift_for(int width, int height) const {
    CounterRng rng(hash_combine({seed_, 0x72616e64ULL, static_cast<std::uint64_t>(width),
                                 static_cast<std::uint64_t>(height)}));
    const auto pick = [&](int n) {
      const int lo = n / 2 - n / 8, hi = n / 2 + n / 8;
      return lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(std::max(0, hi - lo))));
    };
    const int dx = pick(width);
    const int dy = pick(height);
    return {dx, dy};
  }

  // Where the base detector's evidence region reads from, for a blob base.
  BBox borrowed_region(const BBox& evidence, int width, int height) const {
    const auto [dx, dy] = shift_for(width, height);
    BBox r = evidence;
    r.x1 = std::fmod(r.x1 + dx, width);
    r.y1 = std::fmod(r.y1 + dy, height);
    r.x2 = r.x1 + evidence.width();
    r.y2 = r.y1 + evidence.height();
    return r;
  }

  ProposalSet detect(const ImageBuffer& img) override {
    const auto [dx, dy] = shift_for(img.width, img.height);
    ImageBuffer shifted(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
      const int sy = (y + dy) % img.height;
      for (int x = 0; x < img.width; ++x) {
        const int sx = (x + dx) % img.width;
        for (int c = 0; c < ImageBuffer::kChannels; ++c) shifted.at(x, y, c) = img.at(sx, sy, c);
      }
    }
    return base_->detect(shifted);
  }

  std::size_t num_classes() const override { return base_->num_classes(); }
  std::vector<std::string> class_names() const override { return base_->class_names(); }
  bool concurrent_safe() const override { return base_->concurrent_safe(); }
  std::string descriptor() const override { return "randomized(" + std::to_string(seed_) + "):" + base_->descriptor(); }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  DetectorHandle base_;
  std::uint64_t seed_;
};

inline DetectorHandle make_randomized_detector(DetectorHandle base, std::uint64_t seed) {
  return std::make_shared<RandomizedDetector>(std::move(base), seed);
}

// Counts every image submitted to the wrapped detector.
class CountingDetector final : public Detector {
 public:
  explicit CountingDetector(DetectorHandle base) : base_(std::move(base)) {}

  ProposalSet detect(const ImageBuffer& img) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return base_->detect(img);
  }
  std::vector<ProposalSet> detect_batch(std::span<const ImageBuffer> imgs) override {
    calls_.fetch_add(imgs.size(), std::memory_order_relaxed);
    return base_->detect_batch(imgs);
  }
  std::size_t num_classes() const override { return base_->num_classes(); }
  std::vector<std::string> class_names() const override { return base_->class_names(); }
  bool concurrent_safe() const override { return base_->concurrent_safe(); }
  std::string descriptor() const override { return base_->descriptor(); }

  std::uint64_t calls() const noexcept { return calls_.load(); }

 private:
  DetectorHandle base_;
  std::atomic<std::uint64_t> calls_{0};
};

// Returns nothing for every image; used for call-count dry runs.
class NullDetector final : public Detector {
 public:
  explicit NullDetector(std::size_t classes = 1) : classes_(classes) {}
  ProposalSet detect(const ImageBuffer&) override { return {}; }
  std::size_t num_classes() const override { return classes_; }
  bool concurrent_safe() const override { return true; }
  std::string descriptor() const override { return "null"; }

 private:
  std::size_t classes_;
};

}  // namespace dclose
