#include "run_config.hpp"

#include <fstream>
#include <set>

namespace ciss::cli {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

void read_path(const json& obj, const char* key, std::filesystem::path& out, const std::filesystem::path& base) {
  std::string s;
  read(obj, key, s, "paths");
  if (s.empty()) return;
  const std::filesystem::path p(s);
  out = p.is_absolute() ? p : base / p;
}

ApMode parse_ap_mode(const std::string& s) {
  if (s == "area") return ApMode::Area;
  if (s == "voc07") return ApMode::Voc07;
  throw ConfigError("eval.ap_mode: expected 'area' or 'voc07', got '" + s + "'");
}

ErrorFilterConfig::Mode parse_filter_mode(const std::string& s) {
  if (s == "all_errors") return ErrorFilterConfig::Mode::AllErrors;
  if (s == "ignore_loc_sim") return ErrorFilterConfig::Mode::IgnoreLocSim;
  throw ConfigError("eval.mode: expected 'all_errors' or 'ignore_loc_sim', got '" + s + "'");
}

void parse_synth(const json& j, SynthConfig& s, NoiseConfig& n) {
  check_keys(j, "synth",
             {"width", "height", "categories", "categories_per_image_min", "categories_per_image_max",
              "instances_per_category_min", "instances_per_category_max", "object_side_min", "object_side_max",
              "hue_jitter", "size_jitter", "occlusion_fraction", "occlusion_severity", "clutter_patches",
              "min_separation", "seed", "noise"});
  read(j, "width", s.width, "synth");
  read(j, "height", s.height, "synth");
  read(j, "categories_per_image_min", s.categories_per_image_min, "synth");
  read(j, "categories_per_image_max", s.categories_per_image_max, "synth");
  read(j, "instances_per_category_min", s.instances_per_category_min, "synth");
  read(j, "instances_per_category_max", s.instances_per_category_max, "synth");
  read(j, "object_side_min", s.object_side_min, "synth");
  read(j, "object_side_max", s.object_side_max, "synth");
  read(j, "hue_jitter", s.hue_jitter, "synth");
  read(j, "size_jitter", s.size_jitter, "synth");
  read(j, "occlusion_fraction", s.occlusion_fraction, "synth");
  read(j, "occlusion_severity", s.occlusion_severity, "synth");
  read(j, "clutter_patches", s.clutter_patches, "synth");
  read(j, "min_separation", s.min_separation, "synth");
  read(j, "seed", s.seed, "synth");
  if (const auto it = j.find("categories"); it != j.end()) {
    if (!it->is_array() || it->empty()) throw ConfigError("synth.categories: expected [{name, hue}, ...]");
    s.categories.clear();
    for (const auto& entry : *it) {
      check_keys(entry, "synth.categories[]", {"name", "hue"});
      CategoryStyle style;
      read(entry, "name", style.name, "synth.categories[]");
      read(entry, "hue", style.hue, "synth.categories[]");
      s.categories.push_back(std::move(style));
    }
  }
  if (const auto it = j.find("noise"); it != j.end()) {
    check_keys(*it, "synth.noise", {"mu_object", "mu_background", "sigma", "occlusion_penalty", "clutter_rate"});
    read(*it, "mu_object", n.mu_object, "synth.noise");
    read(*it, "mu_background", n.mu_background, "synth.noise");
    read(*it, "sigma", n.sigma, "synth.noise");
    read(*it, "occlusion_penalty", n.occlusion_penalty, "synth.noise");
    read(*it, "clutter_rate", n.clutter_rate, "synth.noise");
  }
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: empty key component in '" + key + "'");
    if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

json load_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    json doc = json::parse(in);
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    return doc;
  } catch (const json::exception& e) {
    throw ConfigError("invalid config " + path.string() + ": " + e.what());
  }
}

RunConfig parse_config(const json& doc, const std::filesystem::path& base) {
  RunConfig c;
  check_keys(doc, "config",
             {"paths", "distance", "search", "anchor", "eval", "workers", "pre_nms", "nms_iou", "lookup_iou",
              "texture_channels", "fit", "synth"});

  if (const auto it = doc.find("paths"); it != doc.end()) {
    check_keys(*it, "paths",
               {"images", "detections", "annotations", "model", "pairs", "patches", "texture_maps",
                "score_rasters", "rescored", "report", "output"});
    read_path(*it, "images", c.paths.images, base);
    read_path(*it, "detections", c.paths.detections, base);
    read_path(*it, "annotations", c.paths.annotations, base);
    read_path(*it, "model", c.paths.model, base);
    read_path(*it, "pairs", c.paths.pairs, base);
    read_path(*it, "patches", c.paths.patches, base);
    read_path(*it, "texture_maps", c.paths.texture_maps, base);
    read_path(*it, "score_rasters", c.paths.score_rasters, base);
    read_path(*it, "rescored", c.paths.rescored, base);
    read_path(*it, "report", c.paths.report, base);
    read_path(*it, "output", c.paths.output, base);
  }
  if (const auto it = doc.find("distance"); it != doc.end()) {
    check_keys(*it, "distance", {"alpha", "beta", "pyramid", "pyramid_weight_whole", "pyramid_weight_cells"});
    read(*it, "alpha", c.distance.alpha, "distance");
    read(*it, "beta", c.distance.beta, "distance");
    read(*it, "pyramid", c.distance.pyramid, "distance");
    read(*it, "pyramid_weight_whole", c.distance.pyramid_weight_whole, "distance");
    read(*it, "pyramid_weight_cells", c.distance.pyramid_weight_cells, "distance");
  }
  if (const auto it = doc.find("search"); it != doc.end()) {
    check_keys(*it, "search", {"n_max", "d_max", "scale_set", "stride", "max_overlap_iou", "min_side"});
    read(*it, "n_max", c.search.n_max, "search");
    read(*it, "d_max", c.search.d_max, "search");
    read(*it, "scale_set", c.search.scale_set, "search");
    read(*it, "stride", c.search.stride, "search");
    read(*it, "max_overlap_iou", c.search.max_overlap_iou, "search");
    read(*it, "min_side", c.search.min_side, "search");
  }
  if (const auto it = doc.find("anchor"); it != doc.end()) {
    check_keys(*it, "anchor", {"score_threshold", "min_side"});
    read(*it, "score_threshold", c.anchor.score_threshold, "anchor");
    read(*it, "min_side", c.anchor.min_side, "anchor");
  }
  if (const auto it = doc.find("eval"); it != doc.end()) {
    check_keys(*it, "eval", {"mode", "loc_iou_lo", "loc_iou_hi", "similarity_groups", "ap_mode", "iou"});
    std::string mode = "all_errors", ap = "area";
    read(*it, "mode", mode, "eval");
    read(*it, "ap_mode", ap, "eval");
    c.filter.mode = parse_filter_mode(mode);
    c.ap_mode = parse_ap_mode(ap);
    read(*it, "loc_iou_lo", c.filter.loc_iou_lo, "eval");
    read(*it, "loc_iou_hi", c.filter.loc_iou_hi, "eval");
    read(*it, "similarity_groups", c.filter.similarity_groups, "eval");
    read(*it, "iou", c.match_iou, "eval");
  }
  read(doc, "workers", c.workers, "config");
  read(doc, "pre_nms", c.pre_nms, "config");
  read(doc, "nms_iou", c.nms_iou, "config");
  read(doc, "lookup_iou", c.lookup_iou, "config");
  read(doc, "texture_channels", c.texture_channels, "config");
  if (const auto it = doc.find("fit"); it != doc.end()) {
    check_keys(*it, "fit", {"bin_width", "max_distance", "min_count", "ridge"});
    read(*it, "bin_width", c.fit.bin_width, "fit");
    read(*it, "max_distance", c.fit.max_distance, "fit");
    read(*it, "min_count", c.fit.min_count, "fit");
    read(*it, "ridge", c.fit.ridge, "fit");
  }
  if (const auto it = doc.find("synth"); it != doc.end()) parse_synth(*it, c.synth, c.noise);

  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  if (c.texture_channels < 0) throw ConfigError("texture_channels must be >= 0");
  if (!(c.nms_iou > 0.0 && c.nms_iou <= 1.0)) throw ConfigError("nms_iou must lie in (0, 1]");
  if (!(c.lookup_iou >= 0.0 && c.lookup_iou <= 1.0)) throw ConfigError("lookup_iou must lie in [0, 1]");
  if (!(c.match_iou > 0.0 && c.match_iou <= 1.0)) throw ConfigError("eval.iou must lie in (0, 1]");
  if (!(c.fit.bin_width > 0.0 && c.fit.max_distance > 0.0)) throw ConfigError("fit: bin_width and max_distance must be > 0");
  if (c.fit.min_count < 1) throw ConfigError("fit.min_count must be >= 1");
  if (!(c.fit.ridge >= 0.0)) throw ConfigError("fit.ridge must be >= 0");
  try {
    c.distance.validate();
    c.search.validate();
    c.filter.validate();
    c.synth.validate();
    c.noise.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

json synth_to_json(const SynthConfig& s, const NoiseConfig& n) {
  json cats = json::array();
  for (const auto& c : s.categories) cats.push_back({{"name", c.name}, {"hue", c.hue}});
  return {{"width", s.width},
          {"height", s.height},
          {"categories", cats},
          {"categories_per_image_min", s.categories_per_image_min},
          {"categories_per_image_max", s.categories_per_image_max},
          {"instances_per_category_min", s.instances_per_category_min},
          {"instances_per_category_max", s.instances_per_category_max},
          {"object_side_min", s.object_side_min},
          {"object_side_max", s.object_side_max},
          {"hue_jitter", s.hue_jitter},
          {"size_jitter", s.size_jitter},
          {"occlusion_fraction", s.occlusion_fraction},
          {"occlusion_severity", s.occlusion_severity},
          {"clutter_patches", s.clutter_patches},
          {"min_separation", s.min_separation},
          {"noise",
           {{"mu_object", n.mu_object},
            {"mu_background", n.mu_background},
            {"sigma", n.sigma},
            {"occlusion_penalty", n.occlusion_penalty},
            {"clutter_rate", n.clutter_rate}}}};
}

}  // namespace ciss::cli
