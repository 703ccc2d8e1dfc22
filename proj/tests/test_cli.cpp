#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <tuple>

#include <json.hpp>

#include "ciss/io.hpp"
#include "ciss/synth.hpp"
#include "support/cli_runner.hpp"
#include "support/fixtures.hpp"

using namespace ciss;
using namespace ciss::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kBinary = CISS_BINARY;

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// Dataset layout produced by `ciss synth` under <root>/data.
json pipeline_config() {
  return {{"paths",
           {{"output", "data"},
            {"images", "data/images"},
            {"detections", "data/detections.jsonl"},
            {"annotations", "data/annotations.jsonl"},
            {"pairs", "data/pairs.jsonl"},
            {"patches", "data/patches.jsonl"},
            {"model", "out/model.json"},
            {"rescored", "out/rescored.csv"},
            {"report", "out/report.json"}}},
          {"workers", 2}};
}

fs::path write_config(const fs::path& dir, const json& cfg) {
  fs::create_directories(dir);
  const fs::path p = dir / "cfg.json";
  write_text(p, cfg.dump(2));
  return p;
}

CliResult cli(const TempDir& t, const std::vector<std::string>& args) { return run_cli(kBinary, args, t.path()); }

// Runs synth, fit, rescore and eval in `root`; every step must succeed.
void run_pipeline(const TempDir& t, const fs::path& root, int n, int workers) {
  const auto cfg = write_config(root, pipeline_config()).string();
  const std::string w = std::to_string(workers);
  REQUIRE(cli(t, {"synth", "-c", cfg, "-n", std::to_string(n), "--seed", "11", "-w", w}).exit_code == 0);
  REQUIRE(cli(t, {"fit", "-c", cfg}).exit_code == 0);
  REQUIRE(cli(t, {"rescore", "-c", cfg, "-w", w}).exit_code == 0);
  REQUIRE(cli(t, {"eval", "-c", cfg}).exit_code == 0);
}

double parse_line_value(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + " ", 0) == 0) return std::stod(line.substr(key.size() + 1));
  FAIL("missing line " << key);
  return 0.0;
}

}  // namespace

TEST_CASE("cli: usage errors exit 1") {
  TempDir t("cli_usage");
  CHECK(cli(t, {}).exit_code == 1);
  CHECK(cli(t, {"fit"}).exit_code == 1);
  CHECK(cli(t, {"frobnicate"}).exit_code == 1);
  CHECK(cli(t, {"fit", "-c", (t / "absent.json").string()}).exit_code == 1);
  write_text(t / "bad.json", "{ not json");
  CHECK(cli(t, {"fit", "-c", (t / "bad.json").string()}).exit_code == 1);
  write_text(t / "typo.json", R"({"serach": {}})");
  CHECK(cli(t, {"fit", "-c", (t / "typo.json").string()}).exit_code == 1);
  write_text(t / "ok.json", "{}");
  CHECK(cli(t, {"eval", "-c", (t / "ok.json").string(), "--ap-mode", "trapezoid"}).exit_code == 1);
  CHECK(cli(t, {"fit", "-c", (t / "ok.json").string(), "--set", "workers=0"}).exit_code == 1);
  CHECK(cli(t, {"--help"}).exit_code == 0);
}

TEST_CASE("cli: missing model exits 2") {
  TempDir t("cli_nomodel");
  const json cfg = {{"paths", {{"model", "nowhere.json"}, {"detections", "d.jsonl"}, {"images", "."}}}};
  const auto r = cli(t, {"rescore", "-c", write_config(t.path(), cfg).string()});
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("nowhere.json") != std::string::npos);
}

TEST_CASE("cli: empty pairs file exits 2 with no valid bins") {
  TempDir t("cli_empty");
  write_text(t / "pairs.jsonl", "");
  write_text(t / "patches.jsonl", R"({"categories":["car"],"scores":{"car":0.9}})" "\n");
  const json cfg = {{"paths", {{"pairs", "pairs.jsonl"}, {"patches", "patches.jsonl"}, {"model", "m.json"}}}};
  const auto r = cli(t, {"fit", "-c", write_config(t.path(), cfg).string()});
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("no valid bins") != std::string::npos);
  CHECK(!fs::exists(t / "m.json"));
}

TEST_CASE("cli: every subcommand is byte-for-byte deterministic") {
  TempDir t("cli_det");
  run_pipeline(t, t / "a", 6, 1);
  run_pipeline(t, t / "b", 6, 3);
  const auto a = snapshot(t / "a"), b = snapshot(t / "b");
  CHECK(a.size() == b.size());
  for (const char* f : {"data/annotations.jsonl", "data/detections.jsonl", "data/pairs.jsonl", "data/patches.jsonl",
                        "data/manifest.json", "data/images/synth00000.ppm", "out/model.json", "out/rescored.csv",
                        "out/report.json", "out/report.pr.csv"}) {
    INFO(f);
    REQUIRE(a.contains(f));
    CHECK(a.at(f) == b.at(f));
  }
  CHECK(a == b);
}

TEST_CASE("cli: synth manifest lists one seed per scene and regenerates them") {
  TempDir t("cli_manifest");
  const auto cfg = write_config(t.path(), pipeline_config()).string();
  REQUIRE(cli(t, {"synth", "-c", cfg, "-n", "4", "--seed", "99"}).exit_code == 0);
  const json manifest = json::parse(read_file(t / "data/manifest.json"));
  REQUIRE(manifest.at("scenes").size() == 4);

  const auto gts = read_ground_truth_jsonl(t / "data/annotations.jsonl");
  const auto dets = read_detections_jsonl(t / "data/detections.jsonl");
  std::vector<GroundTruth> regen_gts;
  std::vector<Detection> regen_dets;
  std::set<std::uint64_t> seeds;
  for (const auto& s : manifest.at("scenes")) {
    const auto id = s.at("image_id").get<std::string>();
    const auto seed = s.at("seed").get<std::uint64_t>();
    seeds.insert(seed);
    const auto sample = make_synthetic_sample(SynthConfig{}, NoiseConfig{}, seed, id);
    const TempDir scratch("cli_regen");
    save_ppm(sample.scene.image, scratch / "x.ppm");
    CHECK(read_file(scratch / "x.ppm") == read_file(t / "data/images" / (id + ".ppm")));
    regen_gts.insert(regen_gts.end(), sample.scene.ground_truth.begin(), sample.scene.ground_truth.end());
    regen_dets.insert(regen_dets.end(), sample.detections.begin(), sample.detections.end());
  }
  CHECK(seeds.size() == 4);
  CHECK(regen_gts == gts);
  CHECK(regen_dets == dets);
}

TEST_CASE("cli: single-image rescore matches the library call") {
  TempDir t("cli_single");
  const auto sample = make_synthetic_sample(SynthConfig{}, NoiseConfig{}, 4242, "solo");
  fs::create_directories(t / "images");
  save_ppm(sample.scene.image, t / "images/solo.ppm");
  write_detections_jsonl(sample.detections, t / "dets.jsonl");

  DependencyModel model;
  model.gamma = {{0.04, 6.0}, {0.03, 3.0}};
  model.priors.fallback = {0.3, 0.35};
  model.priors.per_category["car"] = {0.5, 0.55};
  save_model(model, t / "model.json");

  const json cfg = {{"paths",
                     {{"images", "images"}, {"detections", "dets.jsonl"}, {"model", "model.json"},
                      {"rescored", "out.csv"}}}};
  REQUIRE(cli(t, {"rescore", "-c", write_config(t.path(), cfg).string()}).exit_code == 0);
  const auto rows = read_rescored_csv(t / "out.csv");

  const Image img = load_image(t / "images/solo.ppm");
  const auto expected = rescore_image(img, TextureSource::filter_bank(), sample.detections, model,
                                      ScoreProvider::detection_lookup(sample.detections, 0.3), RescoreConfig{});
  REQUIRE(rows.size() == expected.size());
  int with_support = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RescoredRow e = to_row(expected[i]);
    CHECK(rows[i].detection == e.detection);
    CHECK(rows[i].revised_base == e.revised_base);
    CHECK(rows[i].ciss_score == e.ciss_score);
    CHECK(rows[i].ciss_raw == e.ciss_raw);
    CHECK(rows[i].revised_base_raw == e.revised_base_raw);
    CHECK(rows[i].n_supporters == e.n_supporters);
    CHECK(rows[i].fallback == e.fallback);
    with_support += e.n_supporters > 0;
  }
  CHECK(with_support > 0);
}

TEST_CASE("cli: images that fail are skipped and reported") {
  TempDir t("cli_skip");
  const auto sample = make_synthetic_sample(SynthConfig{}, NoiseConfig{}, 5, "present");
  fs::create_directories(t / "images");
  save_ppm(sample.scene.image, t / "images/present.ppm");
  auto dets = sample.detections;
  dets.push_back({"absent", "car", {0, 0, 20, 20}, 0.7});
  write_detections_jsonl(dets, t / "dets.jsonl");
  DependencyModel model;
  model.gamma = {{0.04, 6.0}, {0.03, 3.0}};
  save_model(model, t / "model.json");
  const json cfg = {{"paths",
                     {{"images", "images"}, {"detections", "dets.jsonl"}, {"model", "model.json"},
                      {"rescored", "out.csv"}}}};
  const auto r = cli(t, {"rescore", "-c", write_config(t.path(), cfg).string()});
  CHECK(r.exit_code == 0);
  CHECK(r.err.find("skipped image absent") != std::string::npos);
  CHECK(r.out.find("1 skipped") != std::string::npos);
  CHECK(read_rescored_csv(t / "out.csv").size() == sample.detections.size());
}

TEST_CASE("cli: pre-NMS keeps exactly the NMS survivors of the CISS scores") {
  TempDir t("cli_nms");
  const auto sample = make_synthetic_sample(SynthConfig{}, NoiseConfig{}, 77, "img");
  fs::create_directories(t / "images");
  save_ppm(sample.scene.image, t / "images/img.ppm");
  // Shifted copies of every detection so suppression has work to do.
  auto dets = sample.detections;
  for (const auto& d : sample.detections) {
    Detection s = d;
    s.box.x += 2;
    s.base_score = d.base_score * 0.9;
    dets.push_back(s);
  }
  write_detections_jsonl(dets, t / "dets.jsonl");
  DependencyModel model;
  model.gamma = {{0.04, 6.0}, {0.03, 3.0}};
  save_model(model, t / "model.json");
  const json cfg = {{"paths",
                     {{"images", "images"}, {"detections", "dets.jsonl"}, {"model", "model.json"},
                      {"rescored", "all.csv"}}}};
  const auto c = write_config(t.path(), cfg).string();
  REQUIRE(cli(t, {"rescore", "-c", c}).exit_code == 0);
  REQUIRE(cli(t, {"rescore", "-c", c, "--pre-nms", "-o", (t / "nms.csv").string()}).exit_code == 0);
  const auto all = read_rescored_csv(t / "all.csv");
  const auto kept = read_rescored_csv(t / "nms.csv");
  REQUIRE(all.size() == dets.size());
  CHECK(kept.size() < all.size());

  std::vector<ScoredBox> by_ciss;
  for (const auto& r : all) by_ciss.push_back({r.detection.image_id, r.detection.category, r.detection.box, r.ciss_raw});
  const auto survivors = greedy_nms(by_ciss, 0.5);
  std::multiset<std::tuple<std::string, int, int, int, int>> want, got;
  for (const auto& s : survivors) want.insert({s.category, s.box.x, s.box.y, s.box.w, s.box.h});
  for (const auto& r : kept) got.insert({r.detection.category, r.detection.box.x, r.detection.box.y, r.detection.box.w, r.detection.box.h});
  CHECK(want == got);
  // Scores themselves are untouched by suppression.
  for (const auto& k : kept) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const RescoredRow& r) { return r.detection == k.detection; });
    REQUIRE(it != all.end());
    CHECK(it->ciss_raw == k.ciss_raw);
  }
}

TEST_CASE("cli: fit recovers known curves and its residuals recompute from the model") {
  TempDir t("cli_fit");
  // s = 0.5 + sqrt(g(d)) u + sqrt(v - g(d)) e with unit-variance uniforms u
  // (shared by the pair) and e, l = [u > 0]. Then cov(s1, s2) = g(d) and
  // cov(l1, s2) = E[u; u > 0] sqrt(g(d)) = sqrt(3)/4 sqrt(g(d)); v keeps
  // every score inside [0, 1].
  const double a = 0.04, b = 6.0, v = 0.041, r3 = std::sqrt(3.0);
  SplitMix64 rng(2024);
  std::vector<PairSample> pairs;
  for (int i = 0; i < 60000; ++i) {
    const double d = rng.uniform(0.0, 0.5), g = a * std::exp(-b * d);
    const double u = rng.uniform(-r3, r3);
    const int l = u > 0.0 ? 1 : 0;
    const double s1 = 0.5 + std::sqrt(g) * u + std::sqrt(v - g) * rng.uniform(-r3, r3);
    const double s2 = 0.5 + std::sqrt(g) * u + std::sqrt(v - g) * rng.uniform(-r3, r3);
    pairs.push_back({d, s1, s2, l, l, true});
  }
  write_pairs_jsonl(pairs, t / "pairs.jsonl");
  write_text(t / "patches.jsonl", R"({"categories":["car"],"scores":{"car":0.9}})" "\n"
                                  R"({"categories":[],"scores":{"car":0.1}})" "\n");
  const json cfg = {{"paths", {{"pairs", "pairs.jsonl"}, {"patches", "patches.jsonl"}, {"model", "m.json"}}}};
  const auto r = cli(t, {"fit", "-c", write_config(t.path(), cfg).string()});
  INFO(r.err);
  REQUIRE(r.exit_code == 0);

  const DependencyModel m = load_model(t / "m.json");
  CHECK(m.gamma.ss.a == doctest::Approx(a).epsilon(0.10));
  CHECK(m.gamma.ss.b == doctest::Approx(b).epsilon(0.15));
  CHECK(m.gamma.ls.a == doctest::Approx(r3 / 4 * std::sqrt(a)).epsilon(0.10));
  CHECK(m.gamma.ls.b == doctest::Approx(b / 2).epsilon(0.15));
  CHECK(m.priors.lookup("car").e_l == 0.5);
  CHECK(m.priors.lookup("car").e_s == 0.5);

  // Written model equals the in-process fit.
  const BinnedCov bc = bin_covariances(read_pairs_jsonl(t / "pairs.jsonl"), uniform_edges());
  const FitResult fit = fit_exponential(bc);
  CHECK(m.gamma == fit.gamma);

  // Printed residuals equal the weighted squared error of the stored curves.
  auto recompute = [&](const Eigen::VectorXd& cov, const ExpCurve& c) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < bc.bins(); ++k)
      if (bc.valid[static_cast<std::size_t>(k)]) {
        const double e = cov(k) - c(bc.midpoint(k));
        sum += static_cast<double>(bc.counts[static_cast<std::size_t>(k)]) * e * e;
      }
    return sum;
  };
  CHECK(parse_line_value(r.out, "residual_ss") == doctest::Approx(recompute(bc.cov_ss, m.gamma.ss)).epsilon(1e-12));
  CHECK(parse_line_value(r.out, "residual_ls") == doctest::Approx(recompute(bc.cov_ls, m.gamma.ls)).epsilon(1e-12));
}

TEST_CASE("cli: eval of perfect detections and filter ordering") {
  TempDir t("cli_eval");
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
  for (int i = 0; i < 5; ++i) {
    const std::string id = "im" + std::to_string(i);
    gts.push_back({id, "car", {10, 10, 20, 20}, false});
    gts.push_back({id, "bird", {50, 10, 20, 20}, false});
    dets.push_back({id, "car", {10, 10, 20, 20}, 0.9 - 0.1 * i});
    dets.push_back({id, "bird", {50, 10, 20, 20}, 0.5 + 0.05 * i});
  }
  write_ground_truth_jsonl(gts, t / "gt.jsonl");
  write_detections_jsonl(dets, t / "perfect.jsonl");
  json cfg = {{"paths", {{"annotations", "gt.jsonl"}, {"detections", "perfect.jsonl"}, {"report", "rep.json"}}}};
  const auto c = write_config(t.path(), cfg).string();
  for (const char* mode : {"area", "voc07"}) {
    REQUIRE(cli(t, {"eval", "-c", c, "--ap-mode", mode}).exit_code == 0);
    const json rep = json::parse(read_file(t / "rep.json"));
    const json& col = rep.at("columns").at("base_score");
    CHECK(col.at("mean_ap").get<double>() == 1.0);
    CHECK(col.at("mean_f").get<double>() == 1.0);
  }
  CHECK(fs::exists(t / "rep.pr.csv"));

  // Localization errors, duplicates and a similar-category confusion.
  for (int i = 0; i < 5; ++i) {
    const std::string id = "im" + std::to_string(i);
    dets.push_back({id, "car", {14, 10, 20, 20}, 0.85});
    dets.push_back({id, "car", {10, 10, 20, 20}, 0.2});
    dets.push_back({id, "car", {50, 12, 20, 20}, 0.95});
    dets.push_back({id, "bird", {90, 90, 20, 20}, 0.6});
  }
  write_detections_jsonl(dets, t / "perfect.jsonl");
  REQUIRE(cli(t, {"eval", "-c", c, "-o", (t / "strict.json").string()}).exit_code == 0);
  REQUIRE(cli(t, {"eval", "-c", c, "--ignore-loc-sim", "-o", (t / "lenient.json").string()}).exit_code == 0);
  const json strict = json::parse(read_file(t / "strict.json")).at("columns").at("base_score");
  const json lenient = json::parse(read_file(t / "lenient.json")).at("columns").at("base_score");
  for (const char* cat : {"car", "bird"}) {
    INFO(cat);
    CHECK(lenient.at("categories").at(cat).at("ap").get<double>() >=
          strict.at("categories").at(cat).at("ap").get<double>());
  }
  CHECK(lenient.at("categories").at("car").at("ap").get<double>() >
        strict.at("categories").at("car").at("ap").get<double>());
}

TEST_CASE("cli: eval reports categories without ground truth") {
  TempDir t("cli_eval_missing");
  write_ground_truth_jsonl(std::vector<GroundTruth>{{"a", "car", {0, 0, 10, 10}, false}}, t / "gt.jsonl");
  write_detections_jsonl(std::vector<Detection>{{"a", "car", {0, 0, 10, 10}, 0.9}, {"a", "boat", {20, 0, 10, 10}, 0.8}},
                         t / "d.jsonl");
  const json cfg = {{"paths", {{"annotations", "gt.jsonl"}, {"detections", "d.jsonl"}, {"report", "r.json"}}}};
  const auto r = cli(t, {"eval", "-c", write_config(t.path(), cfg).string()});
  REQUIRE(r.exit_code == 0);
  const json rep = json::parse(read_file(t / "r.json")).at("columns").at("base_score");
  CHECK(rep.at("categories").at("boat").at("ap").is_null());
  CHECK(rep.at("categories").at("car").at("ap").get<double>() == 1.0);
  CHECK(r.err.find("boat") != std::string::npos);
}

TEST_CASE("cli: rescored CSV is evaluated column by column") {
  TempDir t("cli_eval_csv");
  run_pipeline(t, t.path(), 8, 2);
  const json rep = json::parse(read_file(t / "out/report.json"));
  const json& cols = rep.at("columns");
  CHECK(cols.contains("base_score"));
  CHECK(cols.contains("revised_base"));
  CHECK(cols.contains("ciss_score"));
  // s' is a monotone map of s within each category.
  for (const auto& [cat, entry] : cols.at("base_score").at("categories").items())
    CHECK(entry.at("ap").get<double>() ==
          doctest::Approx(cols.at("revised_base").at("categories").at(cat).at("ap").get<double>()).epsilon(1e-12));
}
