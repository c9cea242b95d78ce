#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cli.hpp"

using namespace dclose;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "dclose");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Shared scene directory, built once.
const fs::path& suite() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "dclose_cli_suite";
    fs::remove_all(d);
    const auto r = run({"make-blob-suite", "--out", d.string(), "--per-group", "2", "--size", "64"});
    if (r.code != 0) throw std::runtime_error(r.err);
    return d;
  }();
  return dir;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dclose_cli_" + name);
  fs::remove_all(p);
  return p;
}

const std::vector<std::string> kFast{"--masks", "60", "--segments", "40", "80", "--drise-masks", "100"};

std::vector<std::string> with_fast(std::vector<std::string> a) {
  a.insert(a.end(), kFast.begin(), kFast.end());
  return a;
}

}  // namespace

TEST(Cli, ExplainWritesFourFiles) {
  const auto out = scratch("explain");
  const auto img = (suite() / "middle_0.png").string();
  const auto r = run(with_fast({"explain", "--image", img, "--detector", "synthetic:blob", "--target", "0", "--out",
                                out.string(), "--prefix", "m0"}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"m0.dcls", "m0_heatmap.png", "m0_overlay.png", "m0_manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto m = read_json(out / "m0_manifest.json");
  EXPECT_EQ(m["method"], "dclose");
  EXPECT_EQ(m["detector_calls"], 120);
  EXPECT_EQ(m["detector_calls_counted"], 120);
  EXPECT_EQ(m["config"]["masks_per_level"], 60);
  EXPECT_EQ(m["outputs"].size(), 4u);
  EXPECT_TRUE(m["timing_seconds"].contains("total"));
  EXPECT_EQ(load_dcls((out / "m0.dcls").string()).width, 64);
}

TEST(Cli, ExplainIsByteReproducibleAndReplayable) {
  const auto out = scratch("repro");
  const auto img = (suite() / "large_1.png").string();
  const auto base = with_fast({"explain", "--image", img, "--out", out.string(), "--seed", "9"});
  auto a = base, b = base;
  a.insert(a.end(), {"--prefix", "a"});
  b.insert(b.end(), {"--prefix", "b", "--jobs", "2"});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(slurp(out / "a.dcls"), slurp(out / "b.dcls"));
  ASSERT_EQ(run({"explain", "--replay", (out / "a_manifest.json").string(), "--out", out.string(), "--prefix", "c"}).code,
            0);
  EXPECT_EQ(slurp(out / "a.dcls"), slurp(out / "c.dcls"));
  auto d = base;
  *(std::find(d.begin(), d.end(), "--seed") + 1) = "10";
  d.insert(d.end(), {"--prefix", "d"});
  ASSERT_EQ(run(d).code, 0);
  EXPECT_NE(slurp(out / "a.dcls"), slurp(out / "d.dcls"));
}

TEST(Cli, DriseMethod) {
  const auto out = scratch("drise");
  const auto r = run(with_fast({"explain", "--image", (suite() / "small_0.png").string(), "--method", "drise", "--out",
                                out.string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(out / "saliency_manifest.json")["detector_calls"], 100);
}

TEST(Cli, ExplicitTargetAndConfigFile) {
  const auto out = scratch("cfg");
  fs::create_directories(out);
  {
    std::ofstream cfg(out / "run.toml");
    cfg << "[explain]\nsegments = [30, 60]\nmasks_per_level = 40\nuse_density = false\n";
  }
  const auto r = run({"explain", "--image", (suite() / "middle_1.png").string(), "--config",
                      (out / "run.toml").string(), "--masks", "50", "--target", "5,5,20,20@1", "--out",
                      out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(out / "saliency_manifest.json");
  EXPECT_EQ(m["config"]["masks_per_level"], 50);  // flag beats file
  EXPECT_EQ(m["config"]["segments"].size(), 2u);
  EXPECT_EQ(m["config"]["use_density"], false);
  EXPECT_EQ(m["target"]["detection"]["scores"], json({0.0, 1.0, 0.0}));
  EXPECT_EQ(m["auxiliary_detector_calls"], 0);
}

TEST(Cli, DryRunCountsDefaultBudgets) {
  const auto out = scratch("dry");
  const auto img = (suite() / "small_1.png").string();
  ASSERT_EQ(run({"explain", "--image", img, "--dry-run", "--out", out.string(), "--prefix", "dc"}).code, 0);
  ASSERT_EQ(run({"explain", "--image", img, "--dry-run", "--method", "drise", "--out", out.string(), "--prefix", "dr"})
                .code,
            0);
  EXPECT_EQ(read_json(out / "dc_manifest.json")["detector_calls_counted"], 4000);
  EXPECT_EQ(read_json(out / "dr_manifest.json")["detector_calls_counted"], 5000);
}

TEST(Cli, ExitCodes) {
  const auto img = (suite() / "small_0.png").string();
  const auto out = scratch("codes").string();
  EXPECT_EQ(run({"explain", "--image", "/nope.png", "--out", out}).code, cli::kUnreadableInput);
  EXPECT_EQ(run({"explain", "--image", img, "--detector", "yolo:v5", "--out", out}).code, cli::kUnknownDetector);
  EXPECT_EQ(run({"explain", "--image", img, "--target", "3", "--out", out}).code, cli::kTargetOutOfRange);
  EXPECT_EQ(run({"explain", "--image", img, "--target", "1,1,5,5@7", "--out", out}).code, cli::kTargetOutOfRange);
  EXPECT_EQ(run({"explain", "--image", img, "--frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"explain", "--image", img, "--segments", "300", "300"}).code, cli::kUsage);
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
  EXPECT_EQ(run({"explain", "--image", img, "--detector", "subprocess:exit 0", "--out", out}).code,
            cli::kBackendFailure);
  fs::create_directories(out);
  {
    std::ofstream bad(fs::path(out) / "bad.toml");
    bad << "[explain]\nmasks_per_level = \n";
  }
  const auto r = run({"explain", "--image", img, "--config", out + "/bad.toml"});
  EXPECT_EQ(r.code, cli::kParseError);
  EXPECT_NE(r.err.find("line 2"), std::string::npos);
}

TEST(Cli, SubprocessDetector) {
  const auto out = scratch("subproc");
  const auto img_path = suite() / "middle_0.png";
  const auto box = cli::auto_blob_box(load_image(img_path.string()));
  std::ostringstream desc;
  desc << "subprocess:\"" << FAKE_BRIDGE << "\" " << box.x1 << ' ' << box.y1 << ' ' << box.x2 << ' ' << box.y2;
  const auto r = run(with_fast({"explain", "--image", img_path.string(), "--detector", desc.str(), "--out",
                                out.string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(out / "saliency_manifest.json");
  EXPECT_EQ(m["detector_calls"], 120);
  const auto remote = load_dcls((out / "saliency.dcls").string());
  EXPECT_GT(ebpg(remote, box), 3 * 100.0 * box.area() / (64.0 * 64.0));  // well above chance
  // same answer as the in-process detector
  ASSERT_EQ(run(with_fast({"explain", "--image", img_path.string(), "--out", out.string(), "--prefix", "local"})).code, 0);
  const auto local = load_dcls((out / "local.dcls").string());
  EXPECT_GT(compare_maps(remote, local), 0.999);
}

TEST(Cli, BenchmarkWritesReport) {
  const auto out = scratch("bench");
  const auto r = run(with_fast({"benchmark", "--manifest", (suite() / "corpus.json").string(), "--out", out.string(),
                                "--ablation", "--steps", "10"}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"records.csv", "records.json", "report.md", "summary.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto recs = read_json(out / "records.json");
  // 6 objects x (D-CLOSE, flipped order, 3 ablation rows, D-RISE)
  EXPECT_EQ(recs.size(), 36u);
  std::set<std::string> groups, methods;
  for (const auto& rec : recs) {
    groups.insert(rec["size_group"].get<std::string>());
    methods.insert(rec["method"].get<std::string>());
  }
  EXPECT_EQ(groups, (std::set<std::string>{"small", "middle", "large"}));
  EXPECT_TRUE(methods.count("D-CLOSE") && methods.count("D-RISE") && methods.count("segment-only"));
  const std::string md = slurp(out / "report.md");
  EXPECT_NE(md.find("small EBPG"), std::string::npos);
  EXPECT_EQ(read_json(out / "summary.json")["planned_calls_per_object"]["D-RISE"], 100);
}

TEST(Cli, BenchmarkManifestErrors) {
  const auto out = scratch("bench_err");
  fs::create_directories(out);
  {
    std::ofstream e(out / "empty.json");
    e << "[]";
    std::ofstream b(out / "broken.json");
    b << "[\n  {\"image_path\": \"x.png\",\n   \"objects\": [oops]}\n]";
  }
  EXPECT_EQ(run({"benchmark", "--manifest", (out / "empty.json").string()}).code, cli::kParseError);
  const auto r = run({"benchmark", "--manifest", (out / "broken.json").string()});
  EXPECT_EQ(r.code, cli::kParseError);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST(Cli, SanitySelfAndRandomized) {
  const auto out = scratch("sanity");
  const auto img = (suite() / "large_0.png").string();
  ASSERT_EQ(run(with_fast({"sanity", "--image", img, "--self", "--out", (out / "self").string()})).code, 0);
  EXPECT_DOUBLE_EQ(read_json(out / "self" / "sanity.json")["correlation"].get<double>(), 1.0);
  ASSERT_EQ(run(with_fast({"sanity", "--image", img, "--out", (out / "rnd").string()})).code, 0);
  const double c = read_json(out / "rnd" / "sanity.json")["correlation"];
  EXPECT_GE(c, -1.0);
  EXPECT_LT(c, 0.5);
  EXPECT_TRUE(fs::exists(out / "rnd" / "randomized_overlay.png"));
  EXPECT_TRUE(fs::exists(out / "rnd" / "base_overlay.png"));
}

TEST(Cli, ErrorDiff) {
  const auto out = scratch("diff");
  const auto img = (suite() / "large_0.png").string();
  ASSERT_EQ(run(with_fast({"errordiff", "--image", img, "--target-a", "0", "--target-b", "0", "--out",
                           (out / "same").string()}))
                .code,
            0);
  for (float v : load_dcls((out / "same" / "diff.dcls").string()).values) EXPECT_EQ(v, 0.0f);
  const auto box = cli::auto_blob_box(load_image(img));
  std::ostringstream shifted;
  shifted << box.x1 + 6 << ',' << box.y1 << ',' << box.x2 + 6 << ',' << box.y2 << "@1";
  ASSERT_EQ(run(with_fast({"errordiff", "--image", img, "--target-a", "0", "--target-b", shifted.str(), "--out",
                           (out / "moved").string()}))
                .code,
            0);
  const auto d = load_dcls((out / "moved" / "diff.dcls").string());
  double mass = 0;
  for (float v : d.values) mass += std::abs(v);
  EXPECT_GT(mass, 0.0);
  for (const char* f : {"target_a.dcls", "target_b.dcls", "diff.csv", "diff_overlay.png", "errordiff.json"})
    EXPECT_TRUE(fs::exists(out / "moved" / f)) << f;
}

TEST(Cli, ConvertCocoAndRender) {
  const auto out = scratch("coco");
  fs::create_directories(out);
  {
    std::ofstream c(out / "coco.json");
    c << R"({"images":[{"id":1,"file_name":"a.png"}],"categories":[{"id":5,"name":"x"}],
             "annotations":[{"image_id":1,"category_id":5,"bbox":[1,2,3,4]}]})";
  }
  ASSERT_EQ(run({"convert-coco", "--coco", (out / "coco.json").string(), "--image-root", "imgs", "--out",
                 (out / "corpus.json").string()})
                .code,
            0);
  const auto corpus = parse_corpus_manifest(slurp(out / "corpus.json"));
  ASSERT_EQ(corpus.size(), 1u);
  EXPECT_EQ(corpus[0].objects[0].box, (BBox{1, 2, 4, 6}));

  save_dcls((out / "m.dcls").string(), SaliencyMap(64, 64, 0.5f));
  ASSERT_EQ(run({"render", "--map", (out / "m.dcls").string(), "--image", (suite() / "small_0.png").string(), "--out",
                 (out / "r").string()})
                .code,
            0);
  EXPECT_TRUE(fs::exists(out / "r_heatmap.png"));
  EXPECT_TRUE(fs::exists(out / "r_overlay.png"));
  EXPECT_EQ(run({"render", "--map", (out / "missing.dcls").string()}).code, cli::kUnreadableInput);
}

TEST(Cli, AutoBlobBox) {
  const auto c = make_blob_case(64, 64, 12, 1, 4);
  EXPECT_EQ(cli::auto_blob_box(c.image), c.box);
  EXPECT_THROW(cli::auto_blob_box(ImageBuffer(8, 8, 0.1f)), cli::CliError);
}
