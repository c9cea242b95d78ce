#pragma once

// Evaluation records, corpus manifests and benchmark reports.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dclose/core.hpp"
#include "dclose/metrics.hpp"

namespace dclose {

inline constexpr const char* kToolVersion = "0.3.0";

struct EvalRecord {
  std::string object_id;
  std::string method;
  SizeGroup size_group = SizeGroup::Small;
  double sparsity = 0.0;
  double ebpg = 0.0;
  double deletion_auc = 0.0;
  double insertion_auc = 0.0;
  double overall = 0.0;
  std::uint64_t detector_calls = 0;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const EvalRecord& r) {
  return {{"object_id", r.object_id},       {"method", r.method},
          {"size_group", size_group_name(r.size_group)},
          {"sparsity", r.sparsity},         {"ebpg", r.ebpg},
          {"deletion_auc", r.deletion_auc}, {"insertion_auc", r.insertion_auc},
          {"overall", r.overall},           {"detector_calls", r.detector_calls},
          {"seconds", r.seconds}};
}

inline void write_records_csv(std::ostream& os, const std::vector<EvalRecord>& recs) {
  os << "object_id,method,size_group,sparsity,ebpg,deletion_auc,insertion_auc,overall,detector_calls,seconds\n";
  char buf[256];
  for (const auto& r : recs) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%llu,%.4f", r.sparsity, r.ebpg, r.deletion_auc,
                  r.insertion_auc, r.overall, static_cast<unsigned long long>(r.detector_calls), r.seconds);
    os << r.object_id << ',' << r.method << ',' << size_group_name(r.size_group) << ',' << buf << '\n';
  }
}

inline nlohmann::json records_to_json(const std::vector<EvalRecord>& recs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : recs) arr.push_back(to_json(r));
  return arr;
}

struct MetricMeans {
  std::size_t count = 0;
  double sparsity = 0, ebpg = 0, deletion = 0, insertion = 0, overall = 0, calls = 0, seconds = 0;
};

inline MetricMeans mean_of(const std::vector<const EvalRecord*>& rs) {
  MetricMeans m;
  m.count = rs.size();
  if (rs.empty()) return m;
  for (const auto* r : rs) {
    m.sparsity += r->sparsity;
    m.ebpg += r->ebpg;
    m.deletion += r->deletion_auc;
    m.insertion += r->insertion_auc;
    m.overall += r->overall;
    m.calls += static_cast<double>(r->detector_calls);
    m.seconds += r->seconds;
  }
  const double n = static_cast<double>(rs.size());
  m.sparsity /= n;
  m.ebpg /= n;
  m.deletion /= n;
  m.insertion /= n;
  m.overall /= n;
  m.calls /= n;
  m.seconds /= n;
  return m;
}

// Markdown table: one row per method, metric columns for each size group and
// for the whole set. AUC columns are percentages.
inline std::string markdown_report(const std::vector<EvalRecord>& recs, const std::vector<std::string>& methods) {
  std::ostringstream os;
  const char* groups[] = {"small", "middle", "large", "whole"};
  os << "| Method |";
  for (const char* g : groups) os << ' ' << g << " Sparsity | " << g << " EBPG (%) | " << g << " Del (%) | " << g
                                   << " Ins (%) | " << g << " Over-all (%) |";
  os << "\n|---|";
  for (int i = 0; i < 4 * 5; ++i) os << "---:|";
  os << '\n';
  char buf[128];
  for (const auto& method : methods) {
    os << "| " << method << " |";
    for (int g = 0; g < 4; ++g) {
      std::vector<const EvalRecord*> sel;
      for (const auto& r : recs)
        if (r.method == method && (g == 3 || static_cast<int>(r.size_group) == g)) sel.push_back(&r);
      if (sel.empty()) {
        os << " - | - | - | - | - |";
        continue;
      }
      const MetricMeans m = mean_of(sel);
      std::snprintf(buf, sizeof buf, " %.2f | %.2f | %.2f | %.2f | %.2f |", m.sparsity, m.ebpg, 100 * m.deletion,
                    100 * m.insertion, 100 * m.overall);
      os << buf;
    }
    os << '\n';
  }
  os << "\n| Method | objects | detector calls / object | seconds / object |\n|---|---:|---:|---:|\n";
  for (const auto& method : methods) {
    std::vector<const EvalRecord*> sel;
    for (const auto& r : recs)
      if (r.method == method) sel.push_back(&r);
    const MetricMeans m = mean_of(sel);
    std::snprintf(buf, sizeof buf, " %zu | %.0f | %.3f |", m.count, m.calls, m.seconds);
    os << "| " << method << " |" << buf << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Corpus manifests
// ---------------------------------------------------------------------------

struct CorpusEntry {
  std::string image_path;
  std::vector<GroundTruth> objects;
};

class ManifestParseError : public std::runtime_error {
 public:
  ManifestParseError(const std::string& what, int line)
      : std::runtime_error("manifest line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

namespace detail {
inline int line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Line on which the n-th element of the top-level array starts.
inline int line_of_element(std::string_view text, std::size_t n) {
  int depth = 0;
  bool in_str = false;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_str) {
      if (c == '\\') ++i;
      else if (c == '"') in_str = false;
      continue;
    }
    if (c == '"') in_str = true;
    else if (c == '{' || c == '[') {
      if (depth == 1 && c == '{' && seen++ == n) return line_of_offset(text, i);
      ++depth;
    } else if (c == '}' || c == ']') --depth;
  }
  return 1;
}
}  // namespace detail

// JSON array of {image_path, objects: [{box: [x1,y1,x2,y2], class_id, class_name}]}.
inline std::vector<CorpusEntry> parse_corpus_manifest(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestParseError(e.what(), detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1));
  }
  if (!j.is_array()) throw ManifestParseError("top level must be an array", 1);
  std::vector<CorpusEntry> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const int line = detail::line_of_element(text, i);
    try {
      const auto& e = j[i];
      CorpusEntry entry;
      entry.image_path = e.at("image_path").get<std::string>();
      for (const auto& o : e.at("objects")) {
        GroundTruth gt;
        const auto b = o.at("box").get<std::vector<double>>();
        if (b.size() != 4) throw ManifestParseError("box must have four coordinates", line);
        gt.box = BBox{b[0], b[1], b[2], b[3]};
        if (!gt.box.valid()) throw ManifestParseError("box must satisfy x1<=x2, y1<=y2", line);
        gt.class_id = o.at("class_id").get<int>();
        gt.class_name = o.value("class_name", std::string{});
        entry.objects.push_back(std::move(gt));
      }
      out.push_back(std::move(entry));
    } catch (const nlohmann::json::exception& e) {
      throw ManifestParseError(e.what(), line);
    }
  }
  return out;
}

inline nlohmann::json corpus_to_json(const std::vector<CorpusEntry>& corpus) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : corpus) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : e.objects)
      objs.push_back({{"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}}, {"class_id", o.class_id},
                      {"class_name", o.class_name}});
    arr.push_back({{"image_path", e.image_path}, {"objects", std::move(objs)}});
  }
  return arr;
}

// COCO instances JSON -> corpus manifest. Category ids are remapped to
// contiguous indices in ascending id order; bbox [x,y,w,h] becomes corners.
inline std::vector<CorpusEntry> convert_coco(const nlohmann::json& coco, const std::string& image_root = "") {
  try {
    std::map<int, int> cat_index;
    std::map<int, std::string> cat_name;
    std::vector<int> ids;
    for (const auto& c : coco.at("categories")) ids.push_back(c.at("id").get<int>());
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) cat_index[ids[i]] = static_cast<int>(i);
    for (const auto& c : coco.at("categories")) cat_name[c.at("id").get<int>()] = c.value("name", std::string{});

    std::vector<CorpusEntry> out;
    std::map<long long, std::size_t> by_image;
    for (const auto& im : coco.at("images")) {
      CorpusEntry e;
      const std::string file = im.at("file_name").get<std::string>();
      e.image_path = image_root.empty() ? file : image_root + "/" + file;
      by_image[im.at("id").get<long long>()] = out.size();
      out.push_back(std::move(e));
    }
    for (const auto& a : coco.at("annotations")) {
      if (a.value("iscrowd", 0) != 0) continue;
      const auto it = by_image.find(a.at("image_id").get<long long>());
      if (it == by_image.end()) continue;
      const auto bb = a.at("bbox").get<std::vector<double>>();
      if (bb.size() != 4) throw InvalidInput("COCO bbox must have four values");
      const int cid = a.at("category_id").get<int>();
      const auto ci = cat_index.find(cid);
      if (ci == cat_index.end()) throw InvalidInput("annotation references unknown category " + std::to_string(cid));
      out[it->second].objects.push_back({BBox{bb[0], bb[1], bb[0] + bb[2], bb[1] + bb[3]}, ci->second, cat_name[cid]});
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed COCO annotations: ") + e.what());
  }
}

}  // namespace dclose
