#include "ciss/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace ciss {

int SplitMix64::uniform_int(int lo, int hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next() % span);
}

double SplitMix64::gaussian() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t scene_seed(std::uint64_t base, std::uint64_t index) {
  SplitMix64 rng(base ^ (0xD1B54A32D192ED03ULL * (index + 1)));
  return rng.next();
}

void SynthConfig::validate() const {
  auto fail = [](const char* what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (width < 16 || height < 16) fail("synthetic images must be at least 16x16");
  if (categories.empty()) fail("at least one category is required");
  if (categories_per_image_min < 0 || categories_per_image_max < categories_per_image_min)
    fail("bad categories_per_image range");
  if (instances_per_category_min < 0 || instances_per_category_max < instances_per_category_min)
    fail("bad instances_per_category range");
  if (object_side_min < 1 || object_side_max < object_side_min) fail("bad object side range");
  if (object_side_max > std::min(width, height)) fail("objects larger than the image");
  if (!(occlusion_fraction >= 0.0 && occlusion_fraction <= 1.0)) fail("occlusion_fraction must lie in [0,1]");
  if (!(occlusion_severity >= 0.0 && occlusion_severity < 1.0)) fail("occlusion_severity must lie in [0,1)");
  if (clutter_patches < 0 || min_separation < 0) fail("negative clutter or separation");
}

std::vector<std::string> SynthConfig::category_names() const {
  std::vector<std::string> names;
  for (const auto& c : categories) names.push_back(c.name);
  return names;
}

void NoiseConfig::validate() const {
  if (!(mu_object > mu_background)) throw Error(ErrorCode::InvalidArgument, "mu_object must exceed mu_background");
  if (!(sigma >= 0.0) || !(clutter_rate >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "sigma and clutter_rate must be non-negative");
}

namespace {

std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  s = std::clamp(s, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  auto to8 = [](double c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)); };
  return {to8(r), to8(g), to8(b)};
}

void paint(Image& img, int x, int y, double h, double s, double v) {
  const auto rgb = hsv_to_rgb(h, s, v);
  img.set(x, y, rgb[0], rgb[1], rgb[2]);
}

Box inflate(const Box& b, int margin) { return {b.x - margin, b.y - margin, b.w + 2 * margin, b.h + 2 * margin}; }

bool fits(const Box& b, const std::vector<Box>& placed, int separation) {
  return std::none_of(placed.begin(), placed.end(),
                      [&](const Box& p) { return intersection_area(inflate(b, separation), p) > 0; });
}

Box place_box(SplitMix64& rng, int width, int height, int w, int h, const std::vector<Box>& placed,
              int separation) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Box b{rng.uniform_int(0, width - w), rng.uniform_int(0, height - h), w, h};
    if (fits(b, placed, separation)) return b;
  }
  throw Error(ErrorCode::InfeasibleConfig, "cannot place box after 1000 attempts");
}

// Smooth value noise: bilinear interpolation of a coarse random lattice.
Eigen::ArrayXXd value_noise(SplitMix64& rng, int width, int height, int cell, double lo, double hi) {
  const int gw = width / cell + 2, gh = height / cell + 2;
  Eigen::ArrayXXd lattice(gh, gw);
  for (int j = 0; j < gh; ++j)
    for (int i = 0; i < gw; ++i) lattice(j, i) = rng.uniform(lo, hi);
  Eigen::ArrayXXd out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) / cell, fy = static_cast<double>(y) / cell;
      const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
      const double tx = fx - ix, ty = fy - iy;
      out(y, x) = (1 - ty) * ((1 - tx) * lattice(iy, ix) + tx * lattice(iy, ix + 1)) +
                  ty * ((1 - tx) * lattice(iy + 1, ix) + tx * lattice(iy + 1, ix + 1));
    }
  return out;
}

struct Appearance {
  double hue = 0.0;
  double saturation = 0.0;
  double value = 0.0;
  double period = 6.0;
  double angle = 0.0;
};

void render_striped(Image& img, const Box& b, const Appearance& a, SplitMix64& rng) {
  const double cx = std::cos(a.angle), sy = std::sin(a.angle);
  for (int y = b.y; y < b.bottom(); ++y)
    for (int x = b.x; x < b.right(); ++x) {
      const double phase = 2.0 * std::numbers::pi * ((x - b.x) * cx + (y - b.y) * sy) / a.period;
      const double v = a.value + 0.2 * std::sin(phase) + rng.uniform(-0.03, 0.03);
      paint(img, x, y, a.hue, a.saturation, v);
    }
}

void render_checker(Image& img, const Box& b, const Appearance& a, SplitMix64& rng) {
  const int cell = std::max(2, static_cast<int>(a.period));
  for (int y = b.y; y < b.bottom(); ++y)
    for (int x = b.x; x < b.right(); ++x) {
      const bool on = (((x - b.x) / cell) + ((y - b.y) / cell)) % 2 == 0;
      paint(img, x, y, a.hue, a.saturation, (on ? a.value + 0.15 : a.value - 0.15) + rng.uniform(-0.03, 0.03));
    }
}

}  // namespace

Scene generate_scene(const SynthConfig& cfg, std::uint64_t seed, const std::string& image_id) {
  cfg.validate();
  SplitMix64 rng(seed);
  Scene scene;
  scene.image_id = image_id;
  scene.image = Image(cfg.width, cfg.height);

  // Background: low-saturation value noise.
  const double bg_hue = rng.uniform();
  const Eigen::ArrayXXd bg = value_noise(rng, cfg.width, cfg.height, 8, 0.35, 0.65);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      paint(scene.image, x, y, bg_hue, 0.08, bg(y, x) + rng.uniform(-0.04, 0.04));

  const int n_categories = std::min<int>(
      rng.uniform_int(cfg.categories_per_image_min, cfg.categories_per_image_max),
      static_cast<int>(cfg.categories.size()));
  std::vector<std::size_t> pool(cfg.categories.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::size_t i = 0; i + 1 < pool.size(); ++i)
    std::swap(pool[i], pool[i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size() - i - 1)))]);

  std::vector<Box> placed;
  for (int k = 0; k < n_categories; ++k) {
    const CategoryStyle& style = cfg.categories[pool[static_cast<std::size_t>(k)]];
    // Shared per image and category so repeated instances look alike.
    Appearance look;
    look.hue = style.hue + rng.uniform(-cfg.hue_jitter, cfg.hue_jitter);
    look.saturation = rng.uniform(0.65, 0.85);
    look.value = rng.uniform(0.55, 0.75);
    look.period = rng.uniform(4.0, 10.0);
    look.angle = rng.uniform(0.0, std::numbers::pi);
    const int base_w = rng.uniform_int(cfg.object_side_min, cfg.object_side_max);
    const int base_h = rng.uniform_int(cfg.object_side_min, cfg.object_side_max);
    const int n_instances = rng.uniform_int(cfg.instances_per_category_min, cfg.instances_per_category_max);
    for (int n = 0; n < n_instances; ++n) {
      const double jitter = 1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter);
      const int w = std::clamp(static_cast<int>(std::lround(base_w * jitter)), cfg.object_side_min, cfg.object_side_max);
      const int h = std::clamp(static_cast<int>(std::lround(base_h * jitter)), cfg.object_side_min, cfg.object_side_max);
      const Box b = place_box(rng, cfg.width, cfg.height, w, h, placed, cfg.min_separation);
      placed.push_back(b);
      render_striped(scene.image, b, look, rng);
      const bool occluded = rng.uniform() < cfg.occlusion_fraction;
      if (occluded) {
        const int sw = std::max(1, static_cast<int>(std::lround(cfg.occlusion_severity * b.w)));
        const int x0 = rng.uniform() < 0.5 ? b.x : b.right() - sw;
        const double shade = rng.uniform(0.25, 0.45);
        for (int y = b.y; y < b.bottom(); ++y)
          for (int x = x0; x < x0 + sw; ++x) paint(scene.image, x, y, 0.0, 0.0, shade + rng.uniform(-0.02, 0.02));
      }
      scene.ground_truth.push_back({image_id, style.name, b, false});
      scene.occluded.push_back(occluded);
    }
  }

  for (int c = 0; c < cfg.clutter_patches; ++c) {
    const int w = rng.uniform_int(cfg.object_side_min, cfg.object_side_max);
    const int h = rng.uniform_int(cfg.object_side_min, cfg.object_side_max);
    const Box b = place_box(rng, cfg.width, cfg.height, w, h, placed, cfg.min_separation);
    placed.push_back(b);
    Appearance look;
    look.hue = rng.uniform();
    look.saturation = rng.uniform(0.15, 0.35);
    look.value = rng.uniform(0.3, 0.7);
    look.period = rng.uniform(3.0, 8.0);
    render_checker(scene.image, b, look, rng);
    scene.clutter.push_back(b);
  }
  return scene;
}

std::vector<Detection> simulate_base_scores(const Scene& scene, const NoiseConfig& noise, std::uint64_t seed) {
  noise.validate();
  SplitMix64 rng(seed);
  std::vector<Detection> out;
  std::set<std::string> present;
  for (std::size_t i = 0; i < scene.ground_truth.size(); ++i) {
    const GroundTruth& gt = scene.ground_truth[i];
    present.insert(gt.category);
    double s = noise.mu_object + noise.sigma * rng.gaussian();
    if (scene.occluded[i]) s += noise.occlusion_penalty;
    out.push_back({scene.image_id, gt.category, gt.box, std::clamp(s, 0.0, 1.0)});
  }
  if (present.empty()) return out;

  const std::vector<std::string> cats(present.begin(), present.end());
  int n_false = static_cast<int>(std::floor(noise.clutter_rate));
  if (rng.uniform() < noise.clutter_rate - n_false) ++n_false;
  std::vector<Box> occupied;
  for (const auto& gt : scene.ground_truth) occupied.push_back(gt.box);
  for (const auto& c : scene.clutter) occupied.push_back(c);
  const int width = scene.image.width(), height = scene.image.height();
  for (int k = 0; k < n_false; ++k) {
    // Sized like an object of the chosen category.
    const std::string& cat = cats[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cats.size()) - 1))];
    Box like{};
    for (const auto& gt : scene.ground_truth)
      if (gt.category == cat) like = gt.box;
    Box b{};
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      b = {rng.uniform_int(0, width - like.w), rng.uniform_int(0, height - like.h), like.w, like.h};
      ok = fits(b, occupied, 0);
    }
    const double s = std::clamp(noise.mu_background + noise.sigma * rng.gaussian(), 0.0, 1.0);
    if (!ok) continue;
    occupied.push_back(b);
    out.push_back({scene.image_id, cat, b, s});
  }
  return out;
}

std::vector<TrainingPatch> extract_training_patches(const Scene& scene, std::span<const Detection> detections,
                                                    const std::vector<std::string>& categories,
                                                    std::uint64_t seed, double lookup_iou) {
  SplitMix64 rng(seed);
  const ScoreProvider lookup =
      ScoreProvider::detection_lookup(std::vector<Detection>(detections.begin(), detections.end()), lookup_iou);
  std::vector<TrainingPatch> patches;
  std::vector<Box> objects;
  for (const auto& gt : scene.ground_truth) {
    patches.push_back({gt.box, gt.category, {}});
    objects.push_back(gt.box);
  }
  for (const auto& d : detections) {
    const bool on_object = std::any_of(objects.begin(), objects.end(),
                                       [&](const Box& o) { return intersection_area(o, d.box) > 0; });
    if (!on_object) patches.push_back({d.box, "", {}});
  }
  const int width = scene.image.width(), height = scene.image.height();
  for (std::size_t k = 0; k < scene.ground_truth.size(); ++k) {
    const Box& like = scene.ground_truth[k].box;
    for (int attempt = 0; attempt < 200; ++attempt) {
      const Box b{rng.uniform_int(0, width - like.w), rng.uniform_int(0, height - like.h), like.w, like.h};
      if (fits(b, objects, 0)) {
        patches.push_back({b, "", {}});
        break;
      }
    }
  }
  for (auto& p : patches)
    for (const auto& c : categories) p.scores[c] = lookup.score(p.box, c);
  return patches;
}

std::vector<PairSample> make_training_pairs(const IntegralStack& is, std::span<const TrainingPatch> patches,
                                            const std::vector<std::string>& categories,
                                            const DistanceParams& params) {
  std::vector<PatchDescriptor> desc(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) describe_patch(is, patches[i].box, params.pyramid, desc[i]);
  std::vector<PairSample> pairs;
  for (std::size_t i = 0; i < patches.size(); ++i)
    for (std::size_t j = i + 1; j < patches.size(); ++j) {
      const double d = patch_distance(desc[i], desc[j], params);
      const bool same = patches[i].label == patches[j].label;
      for (const auto& c : categories) {
        auto score = [&c](const TrainingPatch& p) {
          const auto it = p.scores.find(c);
          return it == p.scores.end() ? 0.0 : it->second;
        };
        pairs.push_back({d, score(patches[i]), score(patches[j]), patches[i].label == c ? 1 : 0,
                         patches[j].label == c ? 1 : 0, same});
      }
    }
  return pairs;
}

std::vector<PatchSample> to_prior_samples(std::span<const TrainingPatch> patches) {
  std::vector<PatchSample> out;
  out.reserve(patches.size());
  for (const auto& p : patches) {
    PatchSample s;
    if (!p.label.empty()) s.categories.push_back(p.label);
    s.scores = p.scores;
    out.push_back(std::move(s));
  }
  return out;
}

SyntheticSample make_synthetic_sample(const SynthConfig& cfg, const NoiseConfig& noise, std::uint64_t seed,
                                      const std::string& image_id, const DistanceParams* training) {
  constexpr std::uint64_t kScoreStream = 0x73636F72;
  SyntheticSample out;
  out.scene = generate_scene(cfg, seed, image_id);
  out.detections = simulate_base_scores(out.scene, noise, seed ^ kScoreStream);
  if (training) {
    std::set<std::string> present;
    for (const auto& g : out.scene.ground_truth) present.insert(g.category);
    for (const auto& d : out.detections) present.insert(d.category);
    const std::vector<std::string> cats(present.begin(), present.end());
    const auto patches = extract_training_patches(out.scene, out.detections, cats, seed + 1);
    const IntegralStack is(compute_channel_stack(out.scene.image, TextureSource::filter_bank()));
    out.pairs = make_training_pairs(is, patches, cats, *training);
    out.patches = to_prior_samples(patches);
  }
  return out;
}

}  // namespace ciss
