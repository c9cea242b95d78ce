#include <gtest/gtest.h>

#include <filesystem>

#include "dclose/dclose.hpp"
#include "dclose/png.hpp"

using namespace dclose;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dclose_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Dcls, RoundTripAndLayout) {
  SaliencyMap m(3, 2, {0.0f, 0.25f, 1.0f, -0.5f, 0.125f, 3.0f});
  std::stringstream ss;
  write_dcls(ss, m);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 16u + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "DCLS");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);
  const auto back = read_dcls(ss);
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.values, m.values);
}

TEST(Dcls, RejectsCorruptInput) {
  std::stringstream bad("XXXX0000000000000000");
  EXPECT_THROW(read_dcls(bad), InvalidInput);
  SaliencyMap m(4, 4, 0.5f);
  std::stringstream ss;
  write_dcls(ss, m);
  std::stringstream truncated(ss.str().substr(0, 30));
  EXPECT_THROW(read_dcls(truncated), InvalidInput);
  EXPECT_THROW(load_dcls("/nonexistent/file.dcls"), InvalidInput);
}

TEST(GridCsv, FullPrecision) {
  std::ostringstream os;
  write_grid_csv(os, Grid<float>(2, 2, std::vector<float>{0.1f, -1.0f, 0.0f, 0.5f}));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(std::stof(line.substr(0, line.find(','))), 0.1f);
  EXPECT_NE(line.find("-1"), std::string::npos);
}

TEST(Toml, ParsesSubset) {
  const auto j = parse_toml(R"(# comment
title = "run # one"

[explain]
segments = [150, 300, 600]  # trailing comment
masks_per_level = 800
fill_probability = 0.5
use_fusion = false
seed = 1_000

[drise]
grid = [8, 8]
)");
  EXPECT_EQ(j["title"], "run # one");
  EXPECT_EQ(j["explain"]["segments"].size(), 3u);
  EXPECT_EQ(j["explain"]["seed"], 1000);
  EXPECT_EQ(j["explain"]["use_fusion"], false);
  EXPECT_EQ(j["drise"]["grid"][1], 8);

  ExplainConfig c;
  apply_json(j["explain"], c);
  EXPECT_EQ(c.segments_per_level, (std::vector<int>{150, 300, 600}));
  EXPECT_EQ(c.master_seed, 1000u);
  EXPECT_FALSE(c.ablation.use_fusion);
  GridMaskConfig g;
  apply_json(j["drise"], g);
  EXPECT_EQ(g.grid_h, 8);
}

TEST(Toml, ErrorsCarryLineNumbers) {
  try {
    parse_toml("a = 1\n\nb = \n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(parse_toml("[a.b]\n"), ConfigError);
  EXPECT_THROW(parse_toml("x = {a = 1}\n"), ConfigError);
  EXPECT_THROW(parse_toml("x = 1\nx = 2\n"), ConfigError);
  EXPECT_THROW(parse_toml("just text\n"), ConfigError);
  EXPECT_THROW(parse_toml("s = \"open\n"), ConfigError);
}

TEST(ConfigJson, RoundTripAndUnknownKeys) {
  ExplainConfig c;
  c.masks_per_level = 123;
  c.fusion_order = FusionOrder::CoarseToFine;
  c.ablation.use_density = false;
  ExplainConfig d;
  apply_json(to_json(c), d);
  EXPECT_EQ(to_json(d), to_json(c));
  EXPECT_THROW(apply_json(nlohmann::json{{"bogus", 1}}, d), InvalidInput);
  EXPECT_THROW(apply_json(nlohmann::json{{"masks_per_level", "many"}}, d), InvalidInput);
  EXPECT_THROW(fusion_order_from_string("sideways"), InvalidInput);
}

TEST(Manifest, ParsesEntries) {
  const auto c = parse_corpus_manifest(R"([
  {"image_path": "a.png", "objects": [{"box": [1, 2, 3, 4], "class_id": 0, "class_name": "cat"}]},
  {"image_path": "b.png", "objects": []}
])");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].objects[0].box, (BBox{1, 2, 3, 4}));
  EXPECT_EQ(c[0].objects[0].class_name, "cat");
  EXPECT_EQ(parse_corpus_manifest(corpus_to_json(c).dump()).size(), 2u);
}

TEST(Manifest, ErrorsReportLine) {
  try {
    parse_corpus_manifest("[\n  {\"image_path\": \"a.png\", \"objects\": []},\n  {\"image_path\": 5, \"objects\": []}\n]");
    FAIL();
  } catch (const ManifestParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  try {
    parse_corpus_manifest("[\n{\"image_path\": \"a.png\",\n \"objects\": [}\n]");
    FAIL();
  } catch (const ManifestParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  try {
    parse_corpus_manifest("[\n\n{\"image_path\": \"a.png\", \"objects\": [{\"box\": [5, 5, 1, 1], \"class_id\": 0}]}]");
    FAIL();
  } catch (const ManifestParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(parse_corpus_manifest("{}"), ManifestParseError);
}

TEST(Coco, Conversion) {
  const auto coco = nlohmann::json::parse(R"({
    "images": [{"id": 7, "file_name": "x.jpg"}, {"id": 9, "file_name": "y.jpg"}],
    "categories": [{"id": 18, "name": "dog"}, {"id": 3, "name": "car"}],
    "annotations": [
      {"image_id": 7, "category_id": 18, "bbox": [10, 20, 30, 40]},
      {"image_id": 7, "category_id": 3, "bbox": [0, 0, 5, 5], "iscrowd": 1},
      {"image_id": 9, "category_id": 3, "bbox": [1, 1, 2, 2]}
    ]})");
  const auto c = convert_coco(coco, "imgs");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].image_path, "imgs/x.jpg");
  ASSERT_EQ(c[0].objects.size(), 1u);
  EXPECT_EQ(c[0].objects[0].box, (BBox{10, 20, 40, 60}));
  EXPECT_EQ(c[0].objects[0].class_id, 1);
  EXPECT_EQ(c[1].objects[0].class_id, 0);
  EXPECT_EQ(c[1].objects[0].class_name, "car");
  EXPECT_THROW(convert_coco(nlohmann::json::object()), InvalidInput);
}

TEST(Png, RoundTrip) {
  const auto dir = temp_dir("png");
  const auto img = make_blob_case(40, 30, 10, 1, 3).image;
  save_image((dir / "a.png").string(), img);
  const auto back = load_image((dir / "a.png").string());
  EXPECT_EQ(back.width, 40);
  EXPECT_EQ(back.height, 30);
  for (std::size_t i = 0; i < img.data.size(); ++i) ASSERT_NEAR(back.data[i], img.data[i], 0.5 / 255 + 1e-6);
  EXPECT_THROW(load_png((dir / "missing.png").string()), InvalidInput);
  {
    std::ofstream junk(dir / "junk.png");
    junk << "not a png";
  }
  EXPECT_THROW(load_png((dir / "junk.png").string()), InvalidInput);
}

TEST(Render, Colormaps) {
  const auto lo = viridis(0.0), hi = viridis(1.0);
  EXPECT_NEAR(lo[0], 0.267, 0.02);
  EXPECT_NEAR(lo[2], 0.329, 0.02);
  EXPECT_NEAR(hi[0], 0.993, 0.02);
  EXPECT_NEAR(hi[1], 0.906, 0.02);
  EXPECT_EQ(diverging(0.0), diverging(-0.0));
  EXPECT_GT(diverging(1.0)[0], diverging(1.0)[2]);
  EXPECT_LT(diverging(-1.0)[0], diverging(-1.0)[2]);
}

TEST(Render, ImagesHaveMapSize) {
  const SaliencyMap m(5, 4, 0.5f);
  const auto h = render_heatmap(m);
  EXPECT_EQ(h.width, 5);
  EXPECT_EQ(h.data.size(), 5u * 4 * 3);
  const auto ov = render_overlay(ImageBuffer(5, 4, 0.2f), m);
  EXPECT_EQ(ov.height, 4);
  Rgb8Image boxed = ov;
  draw_box(boxed, {1, 1, 4, 3}, {255, 0, 0});
  EXPECT_EQ(boxed.data[(1 * 5 + 1) * 3], 255);
  Grid<float> d(2, 1, std::vector<float>{-1.0f, 1.0f});
  const auto dv = render_diverging(d);
  EXPECT_GT(dv.data[2], dv.data[0]);  // negative side is blue
  EXPECT_GT(dv.data[3], dv.data[5]);  // positive side is red
}

TEST(Report, CsvAndMarkdown) {
  std::vector<EvalRecord> recs{{"a#0", "D-CLOSE", SizeGroup::Small, 2.0, 80.0, 0.1, 0.9, 0.8, 4000, 1.0},
                               {"b#0", "D-RISE", SizeGroup::Large, 1.5, 40.0, 0.2, 0.7, 0.5, 5000, 2.0}};
  std::ostringstream os;
  write_records_csv(os, recs);
  EXPECT_NE(os.str().find("a#0,D-CLOSE,small,2.000000,80.000000"), std::string::npos);
  const std::string md = markdown_report(recs, {"D-CLOSE", "D-RISE"});
  EXPECT_NE(md.find("| D-CLOSE | 2.00 | 80.00 | 10.00 | 90.00 | 80.00 | - |"), std::string::npos);
  EXPECT_NE(md.find("| D-RISE | 1 | 5000 |"), std::string::npos);
  EXPECT_EQ(records_to_json(recs)[1]["size_group"], "large");
}
