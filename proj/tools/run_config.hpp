#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ciss/eval.hpp"
#include "ciss/features.hpp"
#include "ciss/rescore.hpp"
#include "ciss/search.hpp"
#include "ciss/synth.hpp"

namespace ciss::cli {

/// Thrown for configuration problems; maps to exit status 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Paths {
  std::filesystem::path images;
  std::filesystem::path detections;
  std::filesystem::path annotations;
  std::filesystem::path model;
  std::filesystem::path pairs;
  std::filesystem::path patches;
  std::filesystem::path texture_maps;
  std::filesystem::path score_rasters;
  std::filesystem::path rescored;  // written by rescore; read by eval when set
  std::filesystem::path report;
  std::filesystem::path output;    // synth dataset directory
};

struct FitSettings {
  double bin_width = 0.05;
  double max_distance = 1.0;
  long min_count = kDefaultMinBinCount;
  double ridge = kDefaultRidge;
};

struct RunConfig {
  Paths paths;
  DistanceParams distance;
  SearchConfig search;
  AnchorConfig anchor;
  ErrorFilterConfig filter;
  ApMode ap_mode = ApMode::Area;
  double match_iou = 0.5;
  int workers = 1;
  bool pre_nms = false;
  double nms_iou = 0.5;
  double lookup_iou = 0.3;
  // External texture maps: channel count, 0 selects the built-in filter bank.
  int texture_channels = 0;
  FitSettings fit;
  SynthConfig synth;
  NoiseConfig noise;
};

/// Applies `--set a.b.c=value` overrides: value is parsed as JSON, or taken
/// as a string when that fails.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Parses a config document. Relative paths resolve against `base_dir`.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

nlohmann::json load_config_document(const std::filesystem::path& path);

nlohmann::json synth_to_json(const SynthConfig& s, const NoiseConfig& n);

}  // namespace ciss::cli
