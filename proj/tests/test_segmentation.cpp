#include <gtest/gtest.h>

#include <queue>

#include "dclose/segmentation.hpp"
#include "dclose/synthetic.hpp"

using namespace dclose;

namespace {

// Every label present, in range, and 4-connected.
void expect_valid_partition(const SegmentationMap& s) {
  ASSERT_EQ(s.labels.size(), static_cast<std::size_t>(s.width) * s.height);
  std::vector<int> comps(s.n_actual, 0);
  std::vector<char> seen(s.labels.size(), 0);
  for (std::size_t start = 0; start < s.labels.size(); ++start) {
    ASSERT_GE(s.labels[start], 0);
    ASSERT_LT(s.labels[start], s.n_actual);
    if (seen[start]) continue;
    const int l = s.labels[start];
    ++comps[l];
    std::queue<std::size_t> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      const int x = static_cast<int>(p % s.width), y = static_cast<int>(p / s.width);
      const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (auto& n : nb) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= s.width || n[1] >= s.height) continue;
        const std::size_t qi = static_cast<std::size_t>(n[1]) * s.width + n[0];
        if (!seen[qi] && s.labels[qi] == l) {
          seen[qi] = 1;
          q.push(qi);
        }
      }
    }
  }
  for (int l = 0; l < s.n_actual; ++l) EXPECT_EQ(comps[l], 1) << "label " << l;
}

}  // namespace

TEST(Slic, SingleSegment) {
  const auto img = textured_background(20, 13, 5);
  const auto s = slic_segment(img, 1);
  EXPECT_EQ(s.n_actual, 1);
  for (int l : s.labels) EXPECT_EQ(l, 0);
}

TEST(Slic, TooManySegmentsRejected) {
  EXPECT_THROW(slic_segment(ImageBuffer(4, 4), 17), InvalidInput);
  EXPECT_THROW(slic_segment(ImageBuffer(4, 4), 0), InvalidInput);
  EXPECT_NO_THROW(slic_segment(ImageBuffer(4, 4), 16));
}

TEST(Slic, ConstantImageTilesNearGrid) {
  const ImageBuffer img(64, 64, 0.4f);
  const auto s = slic_segment(img, 16, 10.0, 10);
  expect_valid_partition(s);
  EXPECT_EQ(s.n_actual, 16);
  const double target = 64.0 * 64.0 / 16.0;
  for (auto a : s.areas()) {
    EXPECT_GE(a, target / 2);
    EXPECT_LE(a, target * 2);
  }
}

TEST(Slic, RespectsStrongEdge) {
  ImageBuffer img(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 16; x < 32; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 1.0f;
  const auto s = slic_segment(img, 8, 10.0, 10);
  expect_valid_partition(s);
  std::vector<int> side(s.n_actual, -1);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const int half = x >= 16;
      int& seen = side[s.at(x, y)];
      if (seen < 0) seen = half;
      EXPECT_EQ(seen, half) << "segment " << s.at(x, y) << " straddles the edge";
    }
}

TEST(Slic, DeterministicAndConnectedOnTexture) {
  const auto img = make_blob_case(96, 96, 20, 1, 9).image;
  for (int n : {150, 300, 600, 1200, 2400}) {
    const auto a = slic_segment(img, n);
    const auto b = slic_segment(img, n);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.n_requested, n);
    expect_valid_partition(a);
    // n_actual may drift from the request but stays in the same ballpark
    EXPECT_GT(a.n_actual, n / 2);
    EXPECT_LT(a.n_actual, n * 2);
  }
}

TEST(Slic, GranularityIncreasesWithRequest) {
  const auto img = textured_background(96, 96, 3);
  int prev = 0;
  for (int n : {150, 300, 600, 1200, 2400}) {
    const int got = slic_segment(img, n).n_actual;
    EXPECT_GT(got, prev);
    prev = got;
  }
}

TEST(Slic, NonSquareImage) {
  const auto img = textured_background(50, 17, 8);
  const auto s = slic_segment(img, 20);
  expect_valid_partition(s);
  EXPECT_EQ(s.width, 50);
  EXPECT_EQ(s.height, 17);
}

TEST(Slic, LabelCsv) {
  const auto s = slic_segment(ImageBuffer(3, 2, 0.5f), 1);
  std::ostringstream os;
  write_label_csv(os, s);
  EXPECT_EQ(os.str(), "0,0,0\n0,0,0\n");
}
