#pragma once

// Command-line front end. Kept in a header so the test suite can drive the
// verbs in-process through run_cli().

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dclose/dclose.hpp"
#include "dclose/png.hpp"
#include "dclose/protocol.hpp"

namespace dclose::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kUnreadableInput = 3,
  kUnknownDetector = 4,
  kTargetOutOfRange = 5,
  kBackendFailure = 6,
  kParseError = 7,
  kUndefinedMetric = 8,
};

class CliError : public std::runtime_error {
 public:
  CliError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

// ---------------------------------------------------------------------------
// Shared option handling
// ---------------------------------------------------------------------------

struct EngineFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> masks;
  std::vector<int> segments;
  std::optional<double> p;
  std::optional<double> resize_ratio;
  bool no_density = false;
  bool no_fusion = false;
  std::optional<std::string> fusion_order;
  std::optional<int> jobs;
  std::optional<int> batch_size;
  std::optional<double> score_floor;
  std::optional<int> drise_masks;
  std::optional<int> drise_grid;
  std::optional<int> steps;
  std::size_t classes = 0;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "TOML config file ([explain], [drise], [metrics] tables)");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--masks", masks, "masks per segmentation level");
    app->add_option("--segments", segments, "segments per level, e.g. --segments 150 300 600")->expected(1, -1);
    app->add_option("--p", p, "fill probability");
    app->add_option("--resize-ratio", resize_ratio, "upsampling headroom ratio r");
    app->add_flag("--no-density", no_density, "divide by mask count instead of the density map");
    app->add_flag("--no-fusion", no_fusion, "average normalized levels instead of the fusion cascade");
    app->add_option("--fusion-order", fusion_order, "fine_to_coarse | coarse_to_fine");
    app->add_option("--jobs", jobs, "worker threads");
    app->add_option("--batch-size", batch_size, "images per detector batch");
    app->add_option("--score-floor", score_floor, "minimum proposal score considered");
    app->add_option("--drise-masks", drise_masks, "grid masks for the baseline");
    app->add_option("--drise-grid", drise_grid, "grid resolution for the baseline (square)");
    app->add_option("--steps", steps, "deletion/insertion steps");
    app->add_option("--classes", classes, "class count of a remote detector (learned from replies if omitted)");
  }

  struct Resolved {
    ExplainConfig explain;
    GridMaskConfig drise;
    int steps = 100;
  };

  // defaults < config file < flags
  Resolved resolve() const {
    Resolved r;
    if (!config_path.empty()) {
      json file;
      try {
        file = load_toml(config_path);
      } catch (const ConfigError& e) {
        throw CliError(kParseError, config_path + ": " + e.what());
      } catch (const InvalidInput& e) {
        throw CliError(kUnreadableInput, e.what());
      }
      try {
        if (file.contains("explain")) apply_json(file["explain"], r.explain);
        if (file.contains("drise")) apply_json(file["drise"], r.drise);
        if (file.contains("metrics")) r.steps = file["metrics"].value("steps", r.steps);
      } catch (const std::exception& e) {
        throw CliError(kParseError, config_path + ": " + e.what());
      }
    }
    ExplainConfig& c = r.explain;
    if (seed) {
      c.master_seed = *seed;
      r.drise.seed = *seed;
    }
    if (masks) c.masks_per_level = *masks;
    if (!segments.empty()) c.segments_per_level = segments;
    if (p) {
      c.fill_probability = *p;
      r.drise.p = *p;
    }
    if (resize_ratio) c.resize_ratio = *resize_ratio;
    if (no_density) c.ablation.use_density = false;
    if (no_fusion) c.ablation.use_fusion = false;
    if (fusion_order) c.fusion_order = fusion_order_from_string(*fusion_order);
    if (jobs) c.jobs = *jobs;
    if (batch_size) c.batch_size = *batch_size;
    if (score_floor) c.score_floor = *score_floor;
    if (drise_masks) r.drise.n = *drise_masks;
    if (drise_grid) r.drise.grid_h = r.drise.grid_w = *drise_grid;
    if (steps) r.steps = *steps;
    c.validate();
    r.drise.validate();
    return r;
  }
};

inline ImageBuffer read_image(const std::string& path) {
  try {
    return load_image(path);
  } catch (const std::exception& e) {
    throw CliError(kUnreadableInput, "cannot read image " + path + ": " + e.what());
  }
}

inline std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CliError(kUsage, "not a number: '" + item + "'");
    }
  }
  return out;
}

// Box of the largest 4-connected region with brightness >= 0.7; the scenes
// produced by make-blob-suite keep their background below that level.
inline BBox auto_blob_box(const ImageBuffer& img) {
  const int w = img.width, h = img.height;
  std::vector<int> comp(img.pixel_count(), -1);
  std::size_t best_size = 0;
  BBox best{};
  std::vector<std::size_t> stack;
  int ncomp = 0;
  for (std::size_t s = 0; s < comp.size(); ++s) {
    if (comp[s] >= 0 || img.brightness(static_cast<int>(s % w), static_cast<int>(s / w)) < 0.7f) continue;
    std::size_t size = 0;
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    comp[s] = ncomp;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
      const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[1] < 0 || q[0] >= w || q[1] >= h) continue;
        const std::size_t qi = static_cast<std::size_t>(q[1]) * w + q[0];
        if (comp[qi] < 0 && img.brightness(q[0], q[1]) >= 0.7f) {
          comp[qi] = ncomp;
          stack.push_back(qi);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = BBox{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1),
                  static_cast<double>(y1 + 1)};
    }
    ++ncomp;
  }
  if (best_size == 0) throw CliError(kUnreadableInput, "synthetic:blob found no bright region in the image");
  return best;
}

// Detector descriptors:
//   synthetic:blob[@x1,y1,x2,y2][+randomized=SEED]
//   subprocess:<shell command>
//   tcp:<host>:<port>
inline DetectorHandle make_detector(const std::string& desc, const ImageBuffer* image, std::size_t classes = 0) {
  if (desc.rfind("synthetic:", 0) == 0) {
    std::string rest = desc.substr(10);
    std::optional<std::uint64_t> rand_seed;
    if (const auto plus = rest.find("+randomized="); plus != std::string::npos) {
      try {
        rand_seed = std::stoull(rest.substr(plus + 12));
      } catch (const std::exception&) {
        throw CliError(kUnknownDetector, "bad randomized seed in '" + desc + "'");
      }
      rest = rest.substr(0, plus);
    }
    if (rest.rfind("blob", 0) != 0) throw CliError(kUnknownDetector, "unknown synthetic detector '" + desc + "'");
    BlobSpec spec;
    if (rest == "blob") {
      if (!image) throw CliError(kUnknownDetector, "synthetic:blob without a box needs an input image");
      spec.box = auto_blob_box(*image);
    } else if (rest.rfind("blob@", 0) == 0) {
      const auto v = parse_numbers(rest.substr(5));
      if (v.size() != 4) throw CliError(kUnknownDetector, "synthetic:blob@ expects x1,y1,x2,y2");
      spec.box = BBox{v[0], v[1], v[2], v[3]};
    } else {
      throw CliError(kUnknownDetector, "unknown synthetic detector '" + desc + "'");
    }
    DetectorHandle det;
    try {
      det = make_blob_detector(spec);
    } catch (const InvalidInput& e) {
      throw CliError(kUnknownDetector, e.what());
    }
    return rand_seed ? make_randomized_detector(det, *rand_seed) : det;
  }
  if (desc.rfind("subprocess:", 0) == 0) {
    const std::string cmd = desc.substr(11);
    if (cmd.empty()) throw CliError(kUnknownDetector, "subprocess: needs a command");
    try {
      return std::make_shared<SubprocessDetector>(cmd, classes);
    } catch (const BackendError& e) {
      throw CliError(kBackendFailure, e.what());
    }
  }
  if (desc.rfind("tcp:", 0) == 0) {
    const std::string addr = desc.substr(4);
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos || colon == 0) throw CliError(kUnknownDetector, "tcp: expects host:port");
    try {
      return std::make_shared<TcpDetector>(addr.substr(0, colon), addr.substr(colon + 1), classes);
    } catch (const BackendError& e) {
      throw CliError(kBackendFailure, e.what());
    }
  }
  throw CliError(kUnknownDetector, "unknown detector '" + desc + "'");
}

// Target syntax: "N" (index into the clean-image detections) or
// "x1,y1,x2,y2@K" (explicit box, one-hot class K, objectness 1).
inline TargetSpec resolve_target(const std::string& spec, Detector& det, const ImageBuffer& img,
                                 std::uint64_t& aux_calls) {
  const auto at = spec.find('@');
  if (at == std::string::npos) {
    std::size_t index = 0;
    try {
      std::size_t used = 0;
      index = std::stoul(spec, &used);
      if (used != spec.size()) throw std::invalid_argument(spec);
    } catch (const std::exception&) {
      throw CliError(kUsage, "bad target '" + spec + "'");
    }
    ProposalSet props;
    try {
      props = det.detect(img);
    } catch (const BackendError& e) {
      throw CliError(kBackendFailure, e.what());
    }
    ++aux_calls;
    if (index >= props.size())
      throw CliError(kTargetOutOfRange, "target index " + std::to_string(index) + " out of range (" +
                                            std::to_string(props.size()) + " detections on the clean image)");
    return TargetSpec{props[index], "detection " + std::to_string(index)};
  }
  const auto box = parse_numbers(spec.substr(0, at));
  if (box.size() != 4) throw CliError(kUsage, "target box expects x1,y1,x2,y2");
  int cls = 0;
  try {
    cls = std::stoi(spec.substr(at + 1));
  } catch (const std::exception&) {
    throw CliError(kUsage, "bad target class in '" + spec + "'");
  }
  const std::size_t c = det.num_classes();
  if (c == 0) throw CliError(kUsage, "explicit targets need a known class count (--classes)");
  if (cls < 0 || static_cast<std::size_t>(cls) >= c)
    throw CliError(kTargetOutOfRange, "target class " + std::to_string(cls) + " out of range");
  TargetSpec t;
  t.target.box = BBox{box[0], box[1], box[2], box[3]};
  t.target.objectness = 1.0;
  t.target.class_scores.assign(c, 0.0);
  t.target.class_scores[static_cast<std::size_t>(cls)] = 1.0;
  t.label = "class " + std::to_string(cls);
  try {
    t.target.validate();
  } catch (const InvalidInput& e) {
    throw CliError(kUsage, e.what());
  }
  return t;
}

inline json times_to_json(const StageTimes& t) {
  return {{"segmentation", t.segmentation}, {"masking", t.masking},   {"detection", t.detection},
          {"accumulation", t.accumulation}, {"fusion", t.fusion},     {"total", t.total()}};
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw CliError(kFailure, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError(kFailure, "cannot create directory " + dir.string() + ": " + ec.message());
}

struct RunOutcome {
  ExplainResult result;
  std::uint64_t aux_calls = 0;
};

inline RunOutcome run_method(const std::string& method, const ImageBuffer& img, Detector& det, const TargetSpec& target,
                             const EngineFlags::Resolved& cfg, std::ostream& log) {
  RunOutcome out;
  try {
    if (method == "dclose") {
      out.result = explain_detailed(img, det, target, cfg.explain, [&](const LevelProgress& p) {
        log << "  level " << (p.level + 1) << "/" << p.levels << ": " << p.segments_actual << " segments, "
            << p.detector_calls << " detector calls\n";
      });
    } else if (method == "drise") {
      out.result = drise_explain_detailed(img, det, target, cfg.drise, cfg.explain);
    } else {
      throw CliError(kUsage, "unknown method '" + method + "'");
    }
  } catch (const BackendError& e) {
    throw CliError(kBackendFailure, e.what());
  } catch (const InvalidInput& e) {
    throw CliError(kUsage, e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

struct ExplainArgs {
  std::string image;
  std::string detector = "synthetic:blob";
  std::string target = "0";
  std::string method = "dclose";
  std::string out_dir = ".";
  std::string prefix = "saliency";
  std::string replay;
  bool dry_run = false;
  bool csv = false;
  EngineFlags engine;
};

inline json target_to_json(const TargetSpec& t, const std::string& spec) {
  return {{"spec", spec}, {"detection", detection_to_json(t.target)}, {"label", t.label.value_or("")}};
}

inline int cmd_explain(ExplainArgs a, std::ostream& log) {
  EngineFlags::Resolved cfg;
  if (!a.replay.empty()) {
    std::ifstream is(a.replay);
    if (!is) throw CliError(kUnreadableInput, "cannot open manifest " + a.replay);
    json m;
    try {
      m = json::parse(is);
      a.image = m.at("inputs").at("image").get<std::string>();
      a.detector = m.at("detector").get<std::string>();
      a.target = m.at("target").at("spec").get<std::string>();
      a.method = m.at("method").get<std::string>();
      a.dry_run = m.value("dry_run", false);
      apply_json(m.at("config"), cfg.explain);
      apply_json(m.at("drise"), cfg.drise);
      cfg.explain.validate();
    } catch (const std::exception& e) {
      throw CliError(kParseError, "bad run manifest " + a.replay + ": " + e.what());
    }
  } else {
    if (a.image.empty()) throw CliError(kUsage, "--image is required");
    cfg = a.engine.resolve();
  }

  const ImageBuffer img = read_image(a.image);
  DetectorHandle backend = make_detector(a.detector, &img, a.engine.classes);
  std::uint64_t aux_calls = 0;
  const TargetSpec target = resolve_target(a.target, *backend, img, aux_calls);

  // A dry run exercises the whole engine but answers every masked image with
  // an empty proposal set, so only the call accounting is meaningful.
  DetectorHandle engine_det = a.dry_run ? std::make_shared<NullDetector>(backend->num_classes()) : backend;
  auto counted = std::make_shared<CountingDetector>(engine_det);
  log << "explaining " << a.image << " with " << a.method << " (" << backend->descriptor() << ")\n";
  RunOutcome run = run_method(a.method, img, *counted, target, cfg, log);

  ensure_dir(a.out_dir);
  const fs::path base = fs::path(a.out_dir) / a.prefix;
  const std::string dcls = base.string() + ".dcls";
  const std::string heat = base.string() + "_heatmap.png";
  const std::string overlay = base.string() + "_overlay.png";
  const std::string manifest = base.string() + "_manifest.json";
  std::vector<std::string> outputs{dcls, heat, overlay, manifest};
  save_dcls(dcls, run.result.saliency);
  save_png(heat, render_heatmap(run.result.saliency));
  Rgb8Image ov = render_overlay(img, run.result.saliency);
  draw_box(ov, target.target.box, {255, 0, 0});
  save_png(overlay, ov);
  if (a.csv) {
    outputs.push_back(base.string() + ".csv");
    save_grid_csv(outputs.back(), run.result.saliency);
  }

  json levels = json::array();
  for (const auto& l : run.result.levels)
    levels.push_back({{"segments_requested", l.segments_requested}, {"segments_actual", l.segments_actual}});
  const json m = {{"tool", "dclose"},
                  {"version", kToolVersion},
                  {"command", "explain"},
                  {"method", a.method},
                  {"dry_run", a.dry_run},
                  {"config", to_json(cfg.explain)},
                  {"drise", to_json(cfg.drise)},
                  {"detector", a.detector},
                  {"detector_resolved", backend->descriptor()},
                  {"inputs", {{"image", a.image}}},
                  {"target", target_to_json(target, a.target)},
                  {"seeds", {{"master", cfg.explain.master_seed}, {"drise", cfg.drise.seed}}},
                  {"levels", levels},
                  {"timing_seconds", times_to_json(run.result.times)},
                  {"detector_calls", run.result.detector_calls},
                  {"detector_calls_counted", counted->calls()},
                  {"auxiliary_detector_calls", aux_calls},
                  {"outputs", outputs}};
  write_json(manifest, m);
  log << "wrote " << outputs.size() << " files to " << a.out_dir << " (" << run.result.detector_calls
      << " detector calls)\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct BenchmarkArgs {
  std::string manifest;
  std::string detector = "synthetic:blob";
  std::string out_dir = "benchmark";
  bool ablation = false;
  bool both_orders = true;
  EngineFlags engine;
};

struct BenchObject {
  std::string id;
  const CorpusEntry* entry = nullptr;
  std::size_t gt_index = 0;
  double area_ratio = 0.0;
};

inline EvalRecord evaluate_map(const std::string& id, const std::string& method, const SaliencyMap& m,
                               const ImageBuffer& img, Detector& det, const TargetSpec& target, const BBox& gt,
                               const EngineFlags::Resolved& cfg) {
  EvalRecord r;
  r.object_id = id;
  r.method = method;
  r.ebpg = ebpg(m, gt);
  try {
    r.sparsity = sparsity(m);
  } catch (const UndefinedMetric&) {
    r.sparsity = 0.0;
  }
  CurveOptions co;
  co.steps = cfg.steps;
  co.score_floor = cfg.explain.score_floor;
  co.batch_size = cfg.explain.batch_size;
  r.deletion_auc = deletion_curve(img, det, target, m, co).auc;
  r.insertion_auc = insertion_curve(img, det, target, m, co).auc;
  r.overall = overall(r.insertion_auc, r.deletion_auc);
  return r;
}

inline std::vector<EvalRecord> benchmark_object(const BenchObject& obj, const std::string& detector_desc,
                                                std::size_t classes, const EngineFlags::Resolved& cfg, bool ablation, bool both_orders,
                                                std::ostream& log, std::mutex& log_mu) {
  const GroundTruth& gt = obj.entry->objects[obj.gt_index];
  const ImageBuffer img = read_image(obj.entry->image_path);
  DetectorHandle det;
  TargetSpec target;
  if (detector_desc == "synthetic:blob") {
    BlobSpec spec;
    spec.box = gt.box;
    det = make_blob_detector(spec);
    auto props = det->detect(img);
    if (props.empty()) return {};
    target = TargetSpec{props.front(), gt.class_name};
  } else {
    det = make_detector(detector_desc, &img, classes);
    const ProposalSet props = det->detect(img);
    const auto matches = match_detections_to_gt(props, {gt});
    if (matches.empty()) return {};
    target = TargetSpec{props[matches.front().det_index], gt.class_name};
  }

  std::vector<EvalRecord> out;
  const auto t0 = std::chrono::steady_clock::now();
  const ExplainResult dc = explain_detailed(img, *det, target, cfg.explain);
  const double dc_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EvalRecord r = evaluate_map(obj.id, "D-CLOSE", dc.saliency, img, *det, target, gt.box, cfg);
  r.detector_calls = dc.detector_calls;
  r.seconds = dc_secs;
  out.push_back(r);

  if (both_orders) {
    ExplainConfig flipped = cfg.explain;
    flipped.fusion_order = flipped.fusion_order == FusionOrder::FineToCoarse ? FusionOrder::CoarseToFine
                                                                             : FusionOrder::FineToCoarse;
    const std::string name = flipped.fusion_order == FusionOrder::FineToCoarse ? "D-CLOSE (fine first)"
                                                                               : "D-CLOSE (coarse first)";
    EvalRecord f = evaluate_map(obj.id, name, compose_saliency(dc.levels, flipped), img, *det, target, gt.box, cfg);
    f.detector_calls = dc.detector_calls;
    out.push_back(f);
  }
  if (ablation) {
    const std::pair<const char*, Ablation> rows[] = {{"segment-only", {false, false}},
                                                     {"+density", {true, false}}};
    for (const auto& [name, abl] : rows) {
      ExplainConfig c = cfg.explain;
      c.ablation = abl;
      EvalRecord a = evaluate_map(obj.id, name, compose_saliency(dc.levels, c), img, *det, target, gt.box, cfg);
      a.detector_calls = dc.detector_calls;
      out.push_back(a);
    }
    ExplainConfig c = cfg.explain;
    c.ablation = {true, true};
    EvalRecord a = evaluate_map(obj.id, "+fusion", compose_saliency(dc.levels, c), img, *det, target, gt.box, cfg);
    a.detector_calls = dc.detector_calls;
    out.push_back(a);
  }

  const auto t1 = std::chrono::steady_clock::now();
  const ExplainResult dr = drise_explain_detailed(img, *det, target, cfg.drise, cfg.explain);
  const double dr_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
  EvalRecord d = evaluate_map(obj.id, "D-RISE", dr.saliency, img, *det, target, gt.box, cfg);
  d.detector_calls = dr.detector_calls;
  d.seconds = dr_secs;
  out.push_back(d);

  std::lock_guard lock(log_mu);
  log << "  " << obj.id << ": EBPG D-CLOSE " << out.front().ebpg << " / D-RISE " << d.ebpg << '\n';
  return out;
}

inline int cmd_benchmark(const BenchmarkArgs& a, std::ostream& log) {
  const auto cfg = a.engine.resolve();
  std::ifstream is(a.manifest);
  if (!is) throw CliError(kUnreadableInput, "cannot open corpus manifest " + a.manifest);
  std::stringstream ss;
  ss << is.rdbuf();
  std::vector<CorpusEntry> corpus;
  try {
    corpus = parse_corpus_manifest(ss.str());
  } catch (const ManifestParseError& e) {
    throw CliError(kParseError, a.manifest + ": " + e.what());
  }
  // Relative image paths resolve against the manifest's directory.
  const fs::path root = fs::path(a.manifest).parent_path();
  for (auto& e : corpus)
    if (fs::path(e.image_path).is_relative()) e.image_path = (root / e.image_path).string();

  std::vector<BenchObject> objects;
  for (const auto& e : corpus) {
    const ImageBuffer img = read_image(e.image_path);
    for (std::size_t g = 0; g < e.objects.size(); ++g) {
      const double ratio = std::clamp(e.objects[g].box.area() / static_cast<double>(img.pixel_count()), 1e-12, 1.0);
      objects.push_back({fs::path(e.image_path).stem().string() + "#" + std::to_string(g), &e, g, ratio});
    }
  }
  if (objects.empty()) throw CliError(kParseError, a.manifest + ": corpus contains no objects");

  std::vector<double> ratios;
  for (const auto& o : objects) ratios.push_back(o.area_ratio);
  std::vector<SizeGroup> groups(objects.size(), SizeGroup::Middle);
  std::vector<double> centroids;
  try {
    const SizeGrouping sg = kmeans_1d_group(ratios);
    groups = sg.groups;
    centroids = sg.centroids;
  } catch (const InvalidInput&) {
    log << "fewer than three distinct object sizes; all objects reported as 'middle'\n";
  }

  log << "benchmarking " << objects.size() << " objects from " << corpus.size() << " images\n";
  std::vector<std::vector<EvalRecord>> per_object(objects.size());
  std::mutex log_mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex fail_mu;
  const int workers = std::max(1, std::min<int>(cfg.explain.jobs, static_cast<int>(objects.size())));
  EngineFlags::Resolved inner = cfg;
  inner.explain.jobs = 1;  // parallelism is across objects here
  const auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= objects.size()) return;
      try {
        per_object[i] = benchmark_object(objects[i], a.detector, a.engine.classes, inner, a.ablation, a.both_orders, log, log_mu);
      } catch (...) {
        std::lock_guard lock(fail_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<EvalRecord> recs;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (per_object[i].empty()) ++skipped;
    for (auto r : per_object[i]) {
      r.size_group = groups[i];
      recs.push_back(std::move(r));
    }
  }

  std::vector<std::string> methods;
  for (const auto& r : recs)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);

  ensure_dir(a.out_dir);
  const fs::path out(a.out_dir);
  {
    std::ofstream os(out / "records.csv");
    write_records_csv(os, recs);
  }
  write_json(out / "records.json", records_to_json(recs));
  const std::string md = markdown_report(recs, methods);
  {
    std::ofstream os(out / "report.md");
    os << "# Benchmark\n\n" << objects.size() - skipped << " objects evaluated, " << skipped
       << " skipped (no matching detection).\n\n" << md;
  }
  json summary = {{"tool", "dclose"},
                  {"version", kToolVersion},
                  {"command", "benchmark"},
                  {"manifest", a.manifest},
                  {"detector", a.detector},
                  {"config", to_json(cfg.explain)},
                  {"drise", to_json(cfg.drise)},
                  {"steps", cfg.steps},
                  {"objects", objects.size()},
                  {"skipped", skipped},
                  {"size_centroids", centroids},
                  {"planned_calls_per_object", {{"D-CLOSE", planned_detector_calls(cfg.explain)},
                                                {"D-RISE", cfg.drise.n}}}};
  write_json(out / "summary.json", summary);
  log << md;
  return kOk;
}

// ---------------------------------------------------------------------------
// sanity
// ---------------------------------------------------------------------------

struct SanityArgs {
  std::string image;
  std::string detector = "synthetic:blob";
  std::string target = "0";
  std::uint64_t rand_seed = 1;
  std::string out_dir = "sanity";
  bool self_check = false;
  int blob_suite = 0;  // > 0: run over that many generated scenes per size group instead of --image
  EngineFlags engine;
};

struct SanityOutcome {
  double correlation = 0.0;
  SaliencyMap base, other;
};

inline SanityOutcome sanity_one(const ImageBuffer& img, const DetectorHandle& base, const TargetSpec& target,
                                const EngineFlags::Resolved& cfg, std::uint64_t rand_seed, bool self_check) {
  SanityOutcome o;
  try {
    o.base = explain(img, *base, target, cfg.explain);
    DetectorHandle other = self_check ? base : make_randomized_detector(base, rand_seed);
    o.other = explain(img, *other, target, cfg.explain);
  } catch (const BackendError& e) {
    throw CliError(kBackendFailure, e.what());
  }
  try {
    o.correlation = compare_maps(o.base, o.other);
  } catch (const UndefinedMetric& e) {
    throw CliError(kUndefinedMetric, e.what());
  }
  return o;
}

inline int cmd_sanity(const SanityArgs& a, std::ostream& log) {
  const auto cfg = a.engine.resolve();
  ensure_dir(a.out_dir);
  const fs::path out(a.out_dir);
  json report = {{"tool", "dclose"}, {"version", kToolVersion}, {"command", "sanity"},
                 {"config", to_json(cfg.explain)}, {"randomized_seed", a.rand_seed}, {"self_check", a.self_check}};
  if (a.blob_suite > 0) {
    BlobSuiteOptions so;
    so.cases_per_group = a.blob_suite;
    json cases = json::array();
    double sum = 0.0, worst = -1.0;
    for (const auto& c : make_blob_suite(so)) {
      DetectorHandle det = make_blob_detector(c.detector_spec());
      const TargetSpec t = clean_target(*det, c.image);
      const auto o = sanity_one(c.image, det, t, cfg, a.rand_seed, a.self_check);
      cases.push_back({{"id", c.id}, {"correlation", o.correlation}});
      sum += o.correlation;
      worst = std::max(worst, o.correlation);
      log << "  " << c.id << ": correlation " << o.correlation << '\n';
    }
    report["cases"] = cases;
    report["mean_correlation"] = sum / static_cast<double>(cases.size());
    report["max_correlation"] = worst;
    log << "mean correlation " << report["mean_correlation"].get<double>() << ", max " << worst << '\n';
  } else {
    if (a.image.empty()) throw CliError(kUsage, "--image or --blob-suite is required");
    const ImageBuffer img = read_image(a.image);
    DetectorHandle base = make_detector(a.detector, &img, a.engine.classes);
    std::uint64_t aux = 0;
    const TargetSpec t = resolve_target(a.target, *base, img, aux);
    const auto o = sanity_one(img, base, t, cfg, a.rand_seed, a.self_check);
    save_png((out / "base_overlay.png").string(), render_overlay(img, o.base));
    save_png((out / (a.self_check ? "repeat_overlay.png" : "randomized_overlay.png")).string(),
             render_overlay(img, o.other));
    save_dcls((out / "base.dcls").string(), o.base);
    save_dcls((out / "other.dcls").string(), o.other);
    report["image"] = a.image;
    report["detector"] = a.detector;
    report["target"] = target_to_json(t, a.target);
    report["correlation"] = o.correlation;
    log << "correlation " << o.correlation << '\n';
  }
  write_json(out / "sanity.json", report);
  return kOk;
}

// ---------------------------------------------------------------------------
// errordiff
// ---------------------------------------------------------------------------

struct ErrorDiffArgs {
  std::string image;
  std::string detector = "synthetic:blob";
  std::string target_a;
  std::string target_b;
  std::string out_dir = "errordiff";
  EngineFlags engine;
};

inline int cmd_errordiff(const ErrorDiffArgs& a, std::ostream& log) {
  const auto cfg = a.engine.resolve();
  if (a.image.empty() || a.target_a.empty() || a.target_b.empty())
    throw CliError(kUsage, "--image, --target-a and --target-b are required");
  const ImageBuffer img = read_image(a.image);
  DetectorHandle det = make_detector(a.detector, &img, a.engine.classes);
  std::uint64_t aux = 0;
  const TargetSpec ta = resolve_target(a.target_a, *det, img, aux);
  const TargetSpec tb = resolve_target(a.target_b, *det, img, aux);
  SaliencyMap ma, mb;
  try {
    ma = explain(img, *det, ta, cfg.explain);
    mb = explain(img, *det, tb, cfg.explain);
  } catch (const BackendError& e) {
    throw CliError(kBackendFailure, e.what());
  }
  const Grid<float> diff = error_diff(ma, mb);
  ensure_dir(a.out_dir);
  const fs::path out(a.out_dir);
  save_dcls((out / "target_a.dcls").string(), ma);
  save_dcls((out / "target_b.dcls").string(), mb);
  save_dcls((out / "diff.dcls").string(), diff);
  save_grid_csv((out / "diff.csv").string(), diff);
  Rgb8Image ov = render_diff_overlay(img, diff);
  draw_box(ov, ta.target.box, {0, 200, 0});
  draw_box(ov, tb.target.box, {220, 0, 0});
  save_png((out / "diff_overlay.png").string(), ov);
  double pos = 0.0, neg = 0.0;
  for (float v : diff.values) (v > 0 ? pos : neg) += std::abs(v);
  write_json(out / "errordiff.json", {{"tool", "dclose"},
                                      {"version", kToolVersion},
                                      {"command", "errordiff"},
                                      {"image", a.image},
                                      {"detector", a.detector},
                                      {"config", to_json(cfg.explain)},
                                      {"target_a", target_to_json(ta, a.target_a)},
                                      {"target_b", target_to_json(tb, a.target_b)},
                                      {"positive_mass", pos},
                                      {"negative_mass", neg}});
  log << "diff mass +" << pos << " / -" << neg << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// convert-coco, render, make-blob-suite
// ---------------------------------------------------------------------------

inline int cmd_convert_coco(const std::string& in, const std::string& image_root, const std::string& out,
                            std::ostream& log) {
  std::ifstream is(in);
  if (!is) throw CliError(kUnreadableInput, "cannot open " + in);
  json coco;
  try {
    coco = json::parse(is);
  } catch (const json::parse_error& e) {
    throw CliError(kParseError, in + ": " + e.what());
  }
  std::vector<CorpusEntry> corpus;
  try {
    corpus = convert_coco(coco, image_root);
  } catch (const InvalidInput& e) {
    throw CliError(kParseError, in + ": " + e.what());
  }
  write_json(out, corpus_to_json(corpus));
  log << "wrote " << corpus.size() << " images to " << out << '\n';
  return kOk;
}

inline int cmd_render(const std::string& map_path, const std::string& image_path, const std::string& out_prefix,
                      bool diff, std::ostream& log) {
  SaliencyMap m;
  try {
    m = load_dcls(map_path);
  } catch (const InvalidInput& e) {
    throw CliError(kUnreadableInput, e.what());
  }
  const fs::path parent = fs::path(out_prefix).parent_path();
  if (!parent.empty()) ensure_dir(parent);
  save_png(out_prefix + "_heatmap.png", diff ? render_diverging(m) : render_heatmap(m));
  if (!image_path.empty()) {
    const ImageBuffer img = read_image(image_path);
    if (img.width != m.width || img.height != m.height)
      throw CliError(kUnreadableInput, "map and image dimensions differ");
    save_png(out_prefix + "_overlay.png", diff ? render_diff_overlay(img, m) : render_overlay(img, m));
  }
  log << "rendered " << map_path << '\n';
  return kOk;
}

inline int cmd_make_blob_suite(const std::string& out_dir, int per_group, int size, std::uint64_t seed,
                               std::ostream& log) {
  if (per_group < 1 || size < 16) throw CliError(kUsage, "need --per-group >= 1 and --size >= 16");
  BlobSuiteOptions so;
  so.cases_per_group = per_group;
  so.width = so.height = size;
  so.seed = seed;
  const double scale = size / 96.0;
  for (auto& r : so.side_range)
    for (int& v : r) v = std::max(2, static_cast<int>(std::lround(v * scale)));
  ensure_dir(out_dir);
  std::vector<CorpusEntry> corpus;
  for (const auto& c : make_blob_suite(so)) {
    const std::string file = c.id + ".png";
    save_image((fs::path(out_dir) / file).string(), c.image);
    corpus.push_back({file, {{c.box, 1, "blob"}}});
  }
  write_json(fs::path(out_dir) / "corpus.json", corpus_to_json(corpus));
  log << "wrote " << corpus.size() << " scenes to " << out_dir << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Saliency explanations for black-box object detectors"};
  app.require_subcommand(1);

  ExplainArgs ex;
  auto* explain_cmd = app.add_subcommand("explain", "explain one detection");
  explain_cmd->add_option("--image", ex.image, "input PNG");
  explain_cmd->add_option("--detector", ex.detector, "synthetic:blob[@x1,y1,x2,y2] | subprocess:<cmd> | tcp:<host:port>");
  explain_cmd->add_option("--target", ex.target, "detection index on the clean image, or x1,y1,x2,y2@class");
  explain_cmd->add_option("--method", ex.method, "dclose | drise")->check(CLI::IsMember({"dclose", "drise"}));
  explain_cmd->add_option("--out", ex.out_dir, "output directory");
  explain_cmd->add_option("--prefix", ex.prefix, "output file prefix");
  explain_cmd->add_option("--replay", ex.replay, "re-run from a run manifest");
  explain_cmd->add_flag("--dry-run", ex.dry_run, "count detector calls without running the detector on masks");
  explain_cmd->add_flag("--csv", ex.csv, "also write the map as CSV");
  ex.engine.attach(explain_cmd);

  BenchmarkArgs bm;
  auto* bench_cmd = app.add_subcommand("benchmark", "evaluate both methods on a corpus");
  bench_cmd->add_option("--manifest", bm.manifest, "corpus manifest JSON")->required();
  bench_cmd->add_option("--detector", bm.detector, "synthetic:blob (per-object from GT) or a remote detector");
  bench_cmd->add_option("--out", bm.out_dir, "output directory");
  bench_cmd->add_flag("--ablation", bm.ablation, "add segment-only / +density / +fusion rows");
  bool single_order = false;
  bench_cmd->add_flag("--single-order", single_order, "skip the flipped fusion order row");
  bm.engine.attach(bench_cmd);

  SanityArgs sa;
  auto* sanity_cmd = app.add_subcommand("sanity", "compare maps under a randomized detector");
  sanity_cmd->add_option("--image", sa.image, "input PNG");
  sanity_cmd->add_option("--detector", sa.detector, "base detector");
  sanity_cmd->add_option("--target", sa.target, "target");
  sanity_cmd->add_option("--rand-seed", sa.rand_seed, "randomization seed");
  sanity_cmd->add_option("--out", sa.out_dir, "output directory");
  sanity_cmd->add_flag("--self", sa.self_check, "compare the base detector with itself");
  sanity_cmd->add_option("--blob-suite", sa.blob_suite, "run on N generated scenes per size group");
  sa.engine.attach(sanity_cmd);

  ErrorDiffArgs ed;
  auto* diff_cmd = app.add_subcommand("errordiff", "difference between explanations of two targets");
  diff_cmd->add_option("--image", ed.image, "input PNG");
  diff_cmd->add_option("--detector", ed.detector, "detector");
  diff_cmd->add_option("--target-a", ed.target_a, "first target (e.g. ground truth)");
  diff_cmd->add_option("--target-b", ed.target_b, "second target (e.g. prediction)");
  diff_cmd->add_option("--out", ed.out_dir, "output directory");
  ed.engine.attach(diff_cmd);

  std::string coco_in, coco_root, coco_out = "corpus.json";
  auto* coco_cmd = app.add_subcommand("convert-coco", "COCO annotations to a corpus manifest");
  coco_cmd->add_option("--coco", coco_in, "COCO instances JSON")->required();
  coco_cmd->add_option("--image-root", coco_root, "prefix for image paths");
  coco_cmd->add_option("--out", coco_out, "output manifest");

  std::string render_map, render_image, render_out = "render";
  bool render_diff = false;
  auto* render_cmd = app.add_subcommand("render", "render a DCLS map as heatmap / overlay PNGs");
  render_cmd->add_option("--map", render_map, "DCLS file")->required();
  render_cmd->add_option("--image", render_image, "image for the overlay");
  render_cmd->add_option("--out", render_out, "output prefix");
  render_cmd->add_flag("--diff", render_diff, "signed map: use the diverging colormap");

  std::string suite_out = "blob_suite";
  int suite_per_group = 10, suite_size = 96;
  std::uint64_t suite_seed = 2023;
  auto* suite_cmd = app.add_subcommand("make-blob-suite", "write synthetic blob scenes and their corpus manifest");
  suite_cmd->add_option("--out", suite_out, "output directory");
  suite_cmd->add_option("--per-group", suite_per_group, "scenes per size group");
  suite_cmd->add_option("--size", suite_size, "image side length");
  suite_cmd->add_option("--seed", suite_seed, "scene seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, log, err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*explain_cmd) return cmd_explain(ex, log);
    if (*bench_cmd) {
      bm.both_orders = !single_order;
      return cmd_benchmark(bm, log);
    }
    if (*sanity_cmd) return cmd_sanity(sa, log);
    if (*diff_cmd) return cmd_errordiff(ed, log);
    if (*coco_cmd) return cmd_convert_coco(coco_in, coco_root, coco_out, log);
    if (*render_cmd) return cmd_render(render_map, render_image, render_out, render_diff, log);
    if (*suite_cmd) return cmd_make_blob_suite(suite_out, suite_per_group, suite_size, suite_seed, log);
  } catch (const CliError& e) {
    err << "error: " << e.what() << '\n';
    return e.code();
  } catch (const BackendError& e) {
    err << "error: detector backend: " << e.what() << '\n';
    return kBackendFailure;
  } catch (const UndefinedMetric& e) {
    err << "error: " << e.what() << '\n';
    return kUndefinedMetric;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace dclose::cli
