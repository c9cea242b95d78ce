#pragma once

// Configuration files and JSON snapshots of the pipeline settings.
//
// Config files use a TOML subset: `# comments`, `[table]` headers, and
// `key = value` pairs whose values are strings, integers, floats, booleans or
// single-line arrays of those. Nested tables and inline tables are rejected.

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "dclose/core.hpp"
#include "dclose/drise.hpp"

namespace dclose {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Strips a trailing comment that is not inside a string.
inline std::string_view strip_comment(std::string_view s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

inline nlohmann::json parse_toml_scalar(std::string_view v, int line) {
  v = trim(v);
  if (v.empty()) throw ConfigError("missing value", line);
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ConfigError("unterminated string", line);
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        const char e = v[++i];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += v[i];
      }
    }
    return out;
  }
  if (v == "true") return true;
  if (v == "false") return false;
  std::string num;
  for (char c : v)
    if (c != '_') num += c;
  std::int64_t iv = 0;
  if (auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), iv); ec == std::errc() && p == num.data() + num.size())
    return iv;
  try {
    std::size_t used = 0;
    const double dv = std::stod(num, &used);
    if (used == num.size()) return dv;
  } catch (const std::exception&) {
  }
  throw ConfigError("cannot parse value '" + std::string(v) + "'", line);
}

inline nlohmann::json parse_toml_value(std::string_view v, int line) {
  v = trim(v);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw ConfigError("unterminated array", line);
    nlohmann::json arr = nlohmann::json::array();
    std::string_view body = trim(v.substr(1, v.size() - 2));
    std::size_t start = 0;
    bool in_str = false;
    for (std::size_t i = 0; i <= body.size(); ++i) {
      if (i < body.size() && body[i] == '"') in_str = !in_str;
      if (i == body.size() || (body[i] == ',' && !in_str)) {
        const std::string_view item = trim(body.substr(start, i - start));
        if (!item.empty()) arr.push_back(parse_toml_scalar(item, line));
        start = i + 1;
      }
    }
    return arr;
  }
  if (!v.empty() && v.front() == '{') throw ConfigError("inline tables are not supported", line);
  return parse_toml_scalar(v, line);
}

}  // namespace detail

// Parses the supported TOML subset into a JSON object ({table: {key: value}}).
inline nlohmann::json parse_toml(std::string_view text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view s = detail::trim(detail::strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ConfigError("malformed table header", line);
      const std::string name(detail::trim(s.substr(1, s.size() - 2)));
      if (name.find('.') != std::string::npos || name.front() == '[') throw ConfigError("nested tables are not supported", line);
      if (root.contains(name)) throw ConfigError("duplicate table [" + name + "]", line);
      root[name] = nlohmann::json::object();
      table = &root[name];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key = value", line);
    const std::string key(detail::trim(s.substr(0, eq)));
    if (key.empty()) throw ConfigError("empty key", line);
    if (table->contains(key)) throw ConfigError("duplicate key '" + key + "'", line);
    (*table)[key] = detail::parse_toml_value(s.substr(eq + 1), line);
  }
  return root;
}

inline nlohmann::json load_toml(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_toml(ss.str());
}

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

inline const char* to_string(FusionOrder o) {
  return o == FusionOrder::FineToCoarse ? "fine_to_coarse" : "coarse_to_fine";
}

inline FusionOrder fusion_order_from_string(std::string_view s) {
  if (s == "fine_to_coarse") return FusionOrder::FineToCoarse;
  if (s == "coarse_to_fine") return FusionOrder::CoarseToFine;
  throw InvalidInput("unknown fusion order '" + std::string(s) + "'");
}

inline nlohmann::json to_json(const ExplainConfig& c) {
  return {{"segments", c.segments_per_level},
          {"masks_per_level", c.masks_per_level},
          {"fill_probability", c.fill_probability},
          {"resize_ratio", c.resize_ratio},
          {"seed", c.master_seed},
          {"use_density", c.ablation.use_density},
          {"use_fusion", c.ablation.use_fusion},
          {"fusion_order", to_string(c.fusion_order)},
          {"normalize_levels", c.normalize_levels},
          {"compactness", c.slic_compactness},
          {"slic_iters", c.slic_max_iters},
          {"score_floor", c.score_floor},
          {"batch_size", c.batch_size},
          {"jobs", c.jobs}};
}

// Overrides the fields present in `j`; unknown keys are rejected.
inline void apply_json(const nlohmann::json& j, ExplainConfig& c) {
  if (!j.is_object()) throw InvalidInput("explain config must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "segments") c.segments_per_level = v.get<std::vector<int>>();
      else if (key == "masks_per_level") c.masks_per_level = v.get<int>();
      else if (key == "fill_probability") c.fill_probability = v.get<double>();
      else if (key == "resize_ratio") c.resize_ratio = v.get<double>();
      else if (key == "seed") c.master_seed = v.get<std::uint64_t>();
      else if (key == "use_density") c.ablation.use_density = v.get<bool>();
      else if (key == "use_fusion") c.ablation.use_fusion = v.get<bool>();
      else if (key == "fusion_order") c.fusion_order = fusion_order_from_string(v.get<std::string>());
      else if (key == "normalize_levels") c.normalize_levels = v.get<bool>();
      else if (key == "compactness") c.slic_compactness = v.get<double>();
      else if (key == "slic_iters") c.slic_max_iters = v.get<int>();
      else if (key == "score_floor") c.score_floor = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "jobs") c.jobs = v.get<int>();
      else throw InvalidInput("unknown explain setting '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("bad explain setting: ") + e.what());
  }
}

inline nlohmann::json to_json(const GridMaskConfig& g) {
  return {{"grid", {g.grid_h, g.grid_w}}, {"p", g.p}, {"masks", g.n}, {"seed", g.seed}};
}

inline void apply_json(const nlohmann::json& j, GridMaskConfig& g) {
  if (!j.is_object()) throw InvalidInput("drise config must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "grid") {
        const auto g2 = v.get<std::vector<int>>();
        if (g2.size() != 2) throw InvalidInput("drise grid must be [rows, cols]");
        g.grid_h = g2[0];
        g.grid_w = g2[1];
      } else if (key == "p") g.p = v.get<double>();
      else if (key == "masks") g.n = v.get<int>();
      else if (key == "seed") g.seed = v.get<std::uint64_t>();
      else throw InvalidInput("unknown drise setting '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("bad drise setting: ") + e.what());
  }
}

}  // namespace dclose
