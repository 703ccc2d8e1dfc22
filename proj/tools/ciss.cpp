#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ciss/eval.hpp"
#include "ciss/io.hpp"
#include "ciss/model.hpp"
#include "ciss/parallel.hpp"
#include "ciss/raster.hpp"
#include "ciss/rescore.hpp"
#include "ciss/synth.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ciss::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  int workers = 0;
  std::string output;
};

RunConfig resolve(const CommonOptions& opts) {
  json doc = load_config_document(opts.config);
  for (const auto& a : opts.overrides) apply_override(doc, a);
  const fs::path base = fs::absolute(fs::path(opts.config)).parent_path();
  RunConfig cfg = parse_config(doc, base);
  if (opts.workers > 0) cfg.workers = opts.workers;
  return cfg;
}

fs::path output_or(const CommonOptions& opts, const fs::path& configured) {
  return opts.output.empty() ? configured : fs::path(opts.output);
}

const fs::path& require_path(const fs::path& p, const char* key) {
  if (p.empty()) throw Error(ErrorCode::MissingFile, std::string("paths.") + key + " is not configured");
  return p;
}

void ensure_parent(const fs::path& file) {
  const fs::path dir = file.parent_path();
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

// fit ----------------------------------------------------------------------

int run_fit(const RunConfig& cfg, const fs::path& model_path) {
  const auto pairs = read_pairs_jsonl(require_path(cfg.paths.pairs, "pairs"));
  const auto patches = read_patches_jsonl(require_path(cfg.paths.patches, "patches"));
  const BinnedCov bc = bin_covariances(pairs, uniform_edges(cfg.fit.bin_width, cfg.fit.max_distance), cfg.fit.min_count);
  const FitResult fit = fit_exponential(bc);

  DependencyModel model;
  model.gamma = fit.gamma;
  model.priors = estimate_priors(patches);
  model.distance = cfg.distance;
  model.ridge = cfg.fit.ridge;
  model.validate();
  ensure_parent(model_path);
  save_model(model, model_path);

  std::ostringstream out;
  out << "bin_lo,bin_hi,count,valid,cov_ss,fit_ss,cov_ls,fit_ls\n";
  for (Eigen::Index k = 0; k < bc.bins(); ++k) {
    const double mid = bc.midpoint(k);
    const bool valid = bc.valid[static_cast<std::size_t>(k)];
    out << format_double(bc.edges(k)) << ',' << format_double(bc.edges(k + 1)) << ','
        << bc.counts[static_cast<std::size_t>(k)] << ',' << (valid ? 1 : 0) << ','
        << (valid ? format_double(bc.cov_ss(k)) : "") << ',' << format_double(fit.gamma.ss(mid)) << ','
        << (valid ? format_double(bc.cov_ls(k)) : "") << ',' << format_double(fit.gamma.ls(mid)) << '\n';
  }
  out << "gamma_ss a=" << format_double(fit.gamma.ss.a) << " b=" << format_double(fit.gamma.ss.b)
      << (fit.degenerate_ss ? " (degenerate)" : "") << '\n';
  out << "gamma_ls a=" << format_double(fit.gamma.ls.a) << " b=" << format_double(fit.gamma.ls.b)
      << (fit.degenerate_ls ? " (degenerate)" : "") << '\n';
  out << "residual_ss " << format_double(fit.residual_ss) << '\n';
  out << "residual_ls " << format_double(fit.residual_ls) << '\n';
  out << "valid_bins " << bc.valid_count() << " of " << bc.bins() << '\n';
  out << "pairs " << pairs.size() << " patches " << patches.size() << '\n';
  out << "model " << model_path.string() << '\n';
  std::cout << out.str();
  return kExitOk;
}

// rescore ------------------------------------------------------------------

fs::path find_image(const fs::path& dir, const std::string& id) {
  for (const char* ext : {".ppm", ".png"}) {
    const fs::path p = dir / (id + ext);
    if (fs::exists(p)) return p;
  }
  throw Error(ErrorCode::MissingFile, "no image " + id + ".ppm or " + id + ".png in " + dir.string());
}

ScoreProvider make_score_provider(const RunConfig& cfg, const std::string& id, const std::vector<Detection>& dets) {
  if (cfg.paths.score_rasters.empty()) return ScoreProvider::detection_lookup(dets, cfg.lookup_iou);
  const fs::path dir = cfg.paths.score_rasters / id;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingFile, "no score raster directory " + dir.string());
  std::map<std::string, ChannelRaster> rasters;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".chan") rasters.emplace(entry.path().stem().string(), read_channel_raster(entry.path()));
  return ScoreProvider::dense_maps(rasters);
}

std::vector<RescoredDetection> rescore_one(const RunConfig& cfg, const DependencyModel& model,
                                           const std::string& id, const std::vector<Detection>& dets) {
  const Image img = load_image(find_image(cfg.paths.images, id));
  const TextureSource texture =
      cfg.texture_channels > 0
          ? TextureSource::external(require_path(cfg.paths.texture_maps, "texture_maps") / (id + ".chan"),
                                    cfg.texture_channels)
          : TextureSource::filter_bank();
  RescoreConfig rc;
  rc.anchor = cfg.anchor;
  rc.search = cfg.search;
  rc.workers = 1;
  auto rescored = rescore_image(img, texture, dets, model, make_score_provider(cfg, id, dets), rc);
  if (!cfg.pre_nms) return rescored;

  // Suppression by CISS score within each category; survivors keep input order.
  std::map<std::string, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < rescored.size(); ++i) by_category[rescored[i].detection.category].push_back(i);
  std::vector<bool> keep(rescored.size(), false);
  for (const auto& [_, idx] : by_category) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (auto i : idx) {
      boxes.push_back(rescored[i].detection.box);
      scores.push_back(rescored[i].ciss_raw);
    }
    for (auto k : greedy_nms_indices(boxes, scores, cfg.nms_iou)) keep[idx[k]] = true;
  }
  std::vector<RescoredDetection> out;
  for (std::size_t i = 0; i < rescored.size(); ++i)
    if (keep[i]) out.push_back(std::move(rescored[i]));
  return out;
}

int run_rescore(const RunConfig& cfg, const fs::path& output) {
  const DependencyModel model = load_model(require_path(cfg.paths.model, "model"));
  const auto detections = read_detections_jsonl(require_path(cfg.paths.detections, "detections"));
  require_path(cfg.paths.images, "images");
  require_path(output, "rescored");

  // Images in order of first appearance.
  std::vector<std::string> ids;
  std::map<std::string, std::vector<Detection>> per_image;
  for (const auto& d : detections) {
    auto& v = per_image[d.image_id];
    if (v.empty()) ids.push_back(d.image_id);
    v.push_back(d);
  }

  std::vector<std::vector<RescoredDetection>> results(ids.size());
  std::vector<std::string> failures(ids.size());
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
    try {
      results[i] = rescore_one(cfg, model, ids[i], per_image.at(ids[i]));
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });

  std::vector<RescoredRow> rows;
  long skipped = 0, anchors = 0, fallbacks = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!failures[i].empty()) {
      ++skipped;
      std::cerr << "rescore: skipped image " << ids[i] << ": " << failures[i] << '\n';
      continue;
    }
    for (const auto& r : results[i]) {
      anchors += r.anchor ? 1 : 0;
      fallbacks += r.fallback ? 1 : 0;
      rows.push_back(to_row(r));
    }
  }
  ensure_parent(output);
  write_rescored_csv(rows, output);
  std::cout << "images " << ids.size() - static_cast<std::size_t>(skipped) << " rescored, " << skipped
            << " skipped\n"
            << "detections " << rows.size() << " anchors " << anchors << " fallbacks " << fallbacks << '\n'
            << "output " << output.string() << '\n';
  return kExitOk;
}

// eval ---------------------------------------------------------------------

json pr_to_json(const EvalReport& r) {
  json cats = json::object();
  for (const auto& [name, c] : r.per_category) {
    json entry = {{"f_best", c.pr.f_best}, {"n_gt", c.pr.n_gt}};
    entry["ap"] = c.pr.ap ? json(*c.pr.ap) : json(nullptr);
    if (c.missing_in_ground_truth) entry["note"] = "category absent from ground truth";
    cats[name] = std::move(entry);
  }
  json out = {{"categories", cats}, {"mean_f", r.mean_f}};
  out["mean_ap"] = r.mean_ap ? json(*r.mean_ap) : json(nullptr);
  return out;
}

int run_eval(const RunConfig& cfg, const fs::path& report_path) {
  const auto gts = read_ground_truth_jsonl(require_path(cfg.paths.annotations, "annotations"));
  require_path(report_path, "report");

  // Score columns under evaluation, in report order.
  std::vector<std::pair<std::string, std::vector<ScoredBox>>> columns;
  if (!cfg.paths.rescored.empty()) {
    const auto rows = read_rescored_csv(cfg.paths.rescored);
    std::vector<ScoredBox> base, revised, ciss;
    for (const auto& r : rows) {
      const Detection& d = r.detection;
      base.push_back({d.image_id, d.category, d.box, d.base_score});
      revised.push_back({d.image_id, d.category, d.box, r.revised_base_raw});
      ciss.push_back({d.image_id, d.category, d.box, r.ciss_raw});
    }
    columns = {{"base_score", std::move(base)}, {"revised_base", std::move(revised)}, {"ciss_score", std::move(ciss)}};
  } else {
    std::vector<ScoredBox> base;
    for (const auto& d : read_detections_jsonl(require_path(cfg.paths.detections, "detections")))
      base.push_back({d.image_id, d.category, d.box, d.base_score});
    columns = {{"base_score", std::move(base)}};
  }

  const bool lenient = cfg.filter.mode == ErrorFilterConfig::Mode::IgnoreLocSim;
  json report = {{"error_filter", lenient ? "ignore_loc_sim" : "all_errors"},
                 {"ap_mode", cfg.ap_mode == ApMode::Area ? "area" : "voc07"},
                 {"iou", cfg.match_iou},
                 {"n_ground_truth", gts.size()}};
  json cols = json::object();
  std::ostringstream pr_csv, summary;
  pr_csv << "column,category,threshold,precision,recall\n";
  summary << "column,category,ap,f_best,n_gt\n";
  for (const auto& [name, dets] : columns) {
    const EvalReport r = evaluate(dets, gts, cfg.filter, cfg.ap_mode, cfg.match_iou);
    cols[name] = pr_to_json(r);
    for (const auto& [cat, c] : r.per_category) {
      for (const auto& p : c.pr.curve)
        pr_csv << name << ',' << cat << ',' << format_double(p.threshold) << ',' << format_double(p.precision) << ','
               << format_double(p.recall) << '\n';
      summary << name << ',' << cat << ',' << (c.pr.ap ? format_double(*c.pr.ap) : "n/a") << ','
              << format_double(c.pr.f_best) << ',' << c.pr.n_gt << '\n';
      if (c.missing_in_ground_truth) std::cerr << "eval: category " << cat << " has no ground truth; AP absent\n";
    }
    summary << name << ",mean," << (r.mean_ap ? format_double(*r.mean_ap) : "n/a") << ','
            << format_double(r.mean_f) << ",\n";
  }
  report["columns"] = std::move(cols);

  ensure_parent(report_path);
  {
    std::ofstream out(report_path);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + report_path.string());
    out << report.dump(2) << '\n';
  }
  fs::path pr_path = report_path;
  pr_path.replace_extension(".pr.csv");
  {
    std::ofstream out(pr_path);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + pr_path.string());
    out << pr_csv.str();
  }
  std::cout << summary.str() << "report " << report_path.string() << '\n';
  return kExitOk;
}

// synth --------------------------------------------------------------------

std::string synth_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "synth%05zu", i);
  return buf;
}

int run_synth(const RunConfig& cfg, const fs::path& dir, long n, std::uint64_t seed) {
  require_path(dir, "output");
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + (dir / "images").string() + ": " + ec.message());

  std::vector<SyntheticSample> samples(static_cast<std::size_t>(n));
  std::vector<std::uint64_t> seeds(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) seeds[i] = scene_seed(seed, i);
  parallel_for(samples.size(), cfg.workers, [&](std::size_t i) {
    samples[i] = make_synthetic_sample(cfg.synth, cfg.noise, seeds[i], synth_id(i), &cfg.distance);
  });

  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
  std::vector<PairSample> pairs;
  std::vector<PatchSample> patches;
  json scenes = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    save_ppm(s.scene.image, dir / "images" / (s.scene.image_id + ".ppm"));
    gts.insert(gts.end(), s.scene.ground_truth.begin(), s.scene.ground_truth.end());
    dets.insert(dets.end(), s.detections.begin(), s.detections.end());
    pairs.insert(pairs.end(), s.pairs.begin(), s.pairs.end());
    patches.insert(patches.end(), s.patches.begin(), s.patches.end());
    scenes.push_back({{"image_id", s.scene.image_id}, {"seed", seeds[i]}});
  }
  write_ground_truth_jsonl(gts, dir / "annotations.jsonl");
  write_detections_jsonl(dets, dir / "detections.jsonl");
  write_pairs_jsonl(pairs, dir / "pairs.jsonl");
  write_patches_jsonl(patches, dir / "patches.jsonl");

  const json manifest = {{"base_seed", seed},
                         {"n", n},
                         {"scenes", scenes},
                         {"synth", synth_to_json(cfg.synth, cfg.noise)},
                         {"distance",
                          {{"alpha", cfg.distance.alpha},
                           {"beta", cfg.distance.beta},
                           {"pyramid", cfg.distance.pyramid},
                           {"pyramid_weight_whole", cfg.distance.pyramid_weight_whole},
                           {"pyramid_weight_cells", cfg.distance.pyramid_weight_cells}}}};
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
  }
  std::cout << "scenes " << n << " objects " << gts.size() << " detections " << dets.size() << " pairs "
            << pairs.size() << '\n'
            << "output " << dir.string() << '\n';
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonOptions& opts, const char* output_help) {
  cmd->add_option("-c,--config", opts.config, "JSON config file")->required();
  cmd->add_option("--set", opts.overrides, "Override a config value: key.path=value (value parsed as JSON)");
  cmd->add_option("-w,--workers", opts.workers, "Worker threads (overrides config)")->check(CLI::PositiveNumber);
  cmd->add_option("-o,--output", opts.output, output_help);
}

int run(int argc, char** argv) {
  CLI::App app{"Context-driven rescoring of object detections"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ciss 1.0");

  CommonOptions fit_opts, rescore_opts, eval_opts, synth_opts;
  auto* fit = app.add_subcommand("fit", "Fit the dependency model from training pairs and patches");
  add_common(fit, fit_opts, "Model file to write (default paths.model)");

  auto* rescore = app.add_subcommand("rescore", "Rescore detections with a fitted model");
  add_common(rescore, rescore_opts, "CSV to write (default paths.rescored)");
  bool pre_nms = false;
  rescore->add_flag("--pre-nms", pre_nms, "Apply greedy NMS on the CISS scores after rescoring");

  auto* eval = app.add_subcommand("eval", "Evaluate detections or a rescored CSV against annotations");
  add_common(eval, eval_opts, "Report JSON to write (default paths.report)");
  bool ignore_loc_sim = false;
  std::string ap_mode;
  eval->add_flag("--ignore-loc-sim", ignore_loc_sim, "Ignore localization and similar-category errors");
  eval->add_option("--ap-mode", ap_mode, "AP definition")->check(CLI::IsMember({"area", "voc07"}));

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth, synth_opts, "Dataset directory (default paths.output)");
  long n_scenes = 0;
  std::uint64_t seed = 0;
  synth->add_option("-n", n_scenes, "Number of scenes")->required()->check(CLI::NonNegativeNumber);
  auto* seed_opt = synth->add_option("--seed", seed, "Base seed (default synth.seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*fit) {
      const RunConfig cfg = resolve(fit_opts);
      return run_fit(cfg, output_or(fit_opts, cfg.paths.model));
    }
    if (*rescore) {
      RunConfig cfg = resolve(rescore_opts);
      if (pre_nms) cfg.pre_nms = true;
      return run_rescore(cfg, output_or(rescore_opts, cfg.paths.rescored));
    }
    if (*eval) {
      RunConfig cfg = resolve(eval_opts);
      if (ignore_loc_sim) cfg.filter.mode = ErrorFilterConfig::Mode::IgnoreLocSim;
      if (!ap_mode.empty()) cfg.ap_mode = ap_mode == "voc07" ? ApMode::Voc07 : ApMode::Area;
      return run_eval(cfg, output_or(eval_opts, cfg.paths.report));
    }
    const RunConfig cfg = resolve(synth_opts);
    return run_synth(cfg, output_or(synth_opts, cfg.paths.output), n_scenes, seed_opt->count() ? seed : cfg.synth.seed);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace
}  // namespace ciss::cli

int main(int argc, char** argv) { return ciss::cli::run(argc, argv); }
