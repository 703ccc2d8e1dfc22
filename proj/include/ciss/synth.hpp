#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ciss/eval.hpp"
#include "ciss/features.hpp"
#include "ciss/model.hpp"
#include "ciss/rescore.hpp"

namespace ciss {

/// SplitMix64 (Steele, Lea, Flood): state advances by 0x9E3779B97F4A7C15 and
/// is mixed with multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.
/// Every synthetic draw goes through this generator so outputs do not depend
/// on the standard library's distribution implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  /// Standard normal via Box-Muller (one value per call).
  double gaussian();

 private:
  std::uint64_t state_;
};

/// Seed of the i-th scene of a run started from `base`.
std::uint64_t scene_seed(std::uint64_t base, std::uint64_t index);

struct CategoryStyle {
  std::string name;
  double hue = 0.0;  // appearance center in [0,1)
};

struct SynthConfig {
  int width = 144;
  int height = 144;
  std::vector<CategoryStyle> categories = {{"car", 0.0}, {"bird", 0.33}, {"chair", 0.62}};
  int categories_per_image_min = 1;
  int categories_per_image_max = 2;
  int instances_per_category_min = 2;
  int instances_per_category_max = 4;
  int object_side_min = 18;
  int object_side_max = 28;
  double hue_jitter = 0.05;        // per image and category
  double size_jitter = 0.1;        // between instances of one category in one image
  double occlusion_fraction = 0.3;
  double occlusion_severity = 0.5; // fraction of the box width hidden by the stripe
  int clutter_patches = 2;
  int min_separation = 2;          // pixels between planted boxes
  std::uint64_t seed = 1;

  void validate() const;
  std::vector<std::string> category_names() const;
};

struct NoiseConfig {
  double mu_object = 0.8;
  double mu_background = 0.2;
  double sigma = 0.15;
  double occlusion_penalty = -0.4;
  double clutter_rate = 2.0;  // false alarms per image

  void validate() const;
};

struct Scene {
  std::string image_id;
  Image image;
  std::vector<GroundTruth> ground_truth;
  std::vector<bool> occluded;     // parallel to ground_truth
  std::vector<Box> clutter;       // distractor patches
};

Scene generate_scene(const SynthConfig& cfg, std::uint64_t seed, const std::string& image_id = "scene");

/// One detection per planted object plus false alarms on background.
std::vector<Detection> simulate_base_scores(const Scene& scene, const NoiseConfig& noise, std::uint64_t seed);

/// Annotated patches of one scene: every object box, the false-alarm boxes
/// and as many random background boxes as there are objects. Scores come
/// from detection lookup against `detections`.
struct TrainingPatch {
  Box box;
  std::string label;  // empty for background
  std::map<std::string, double> scores;
};

std::vector<TrainingPatch> extract_training_patches(const Scene& scene, std::span<const Detection> detections,
                                                    const std::vector<std::string>& categories,
                                                    std::uint64_t seed, double lookup_iou = 0.3);

/// All same-image patch pairs, once per category present in the scene.
std::vector<PairSample> make_training_pairs(const IntegralStack& is, std::span<const TrainingPatch> patches,
                                            const std::vector<std::string>& categories,
                                            const DistanceParams& params);

std::vector<PatchSample> to_prior_samples(std::span<const TrainingPatch> patches);

/// A generated scene with its simulated detections and, on request, its
/// training pairs and patches (over the categories present in the scene).
struct SyntheticSample {
  Scene scene;
  std::vector<Detection> detections;
  std::vector<PairSample> pairs;
  std::vector<PatchSample> patches;
};

SyntheticSample make_synthetic_sample(const SynthConfig& cfg, const NoiseConfig& noise, std::uint64_t seed,
                                      const std::string& image_id, const DistanceParams* training = nullptr);

}  // namespace ciss
