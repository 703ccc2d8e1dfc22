#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ciss/features.hpp"

namespace ciss {

/// Two patches from one image with their base-scores and identities.
struct PairSample {
  double distance = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;
  int l1 = 0;
  int l2 = 0;
  bool same_label = false;

  friend bool operator==(const PairSample&, const PairSample&) = default;
};

/// Score/score and label/score covariance per distance interval.
struct BinnedCov {
  Eigen::VectorXd edges;
  std::vector<long> counts;
  Eigen::VectorXd cov_ss;
  Eigen::VectorXd cov_ls;
  std::vector<bool> valid;

  Eigen::Index bins() const { return static_cast<Eigen::Index>(counts.size()); }
  double midpoint(Eigen::Index i) const { return 0.5 * (edges(i) + edges(i + 1)); }
  int valid_count() const;
};

inline constexpr long kDefaultMinBinCount = 50;

/// Edges 0, width, 2*width, ... up to max_distance.
Eigen::VectorXd uniform_edges(double width = 0.05, double max_distance = 1.0);

/// Index of the half-open interval holding d (the last interval is closed),
/// or -1 when d lies outside the edges.
Eigen::Index bin_index(const Eigen::VectorXd& edges, double d);

BinnedCov bin_covariances(std::span<const PairSample> pairs, const Eigen::VectorXd& edges,
                          long min_count = kDefaultMinBinCount);

/// a * exp(-b * d)
struct ExpCurve {
  double a = 0.0;
  double b = 0.0;

  double operator()(double d) const { return a * std::exp(-b * d); }
  friend bool operator==(const ExpCurve&, const ExpCurve&) = default;
};

struct GammaParams {
  ExpCurve ss;
  ExpCurve ls;

  friend bool operator==(const GammaParams&, const GammaParams&) = default;
};

struct FitResult {
  GammaParams gamma;
  double residual_ss = 0.0;
  double residual_ls = 0.0;
  // Set when every valid bin of the curve is <= 0; the curve is then a = 0.
  bool degenerate_ss = false;
  bool degenerate_ls = false;
};

/// The 200 log-spaced decay rates searched by fit_exponential.
Eigen::VectorXd decay_grid();

/// Best count-weighted non-negative amplitude for a fixed decay rate, and the
/// resulting weighted squared error over the valid bins.
struct AmplitudeFit {
  double a = 0.0;
  double residual = 0.0;
};
AmplitudeFit fit_amplitude(const BinnedCov& bc, const Eigen::VectorXd& cov, double b);

FitResult fit_exponential(const BinnedCov& bc);

struct CategoryPrior {
  double e_l = 0.0;
  double e_s = 0.0;

  friend bool operator==(const CategoryPrior&, const CategoryPrior&) = default;
};

struct CategoryPriors {
  std::map<std::string, CategoryPrior> per_category;
  CategoryPrior fallback;

  const CategoryPrior& lookup(const std::string& category) const {
    const auto it = per_category.find(category);
    return it == per_category.end() ? fallback : it->second;
  }
  friend bool operator==(const CategoryPriors&, const CategoryPriors&) = default;
};

/// One annotated patch: the categories it depicts and its base-score for
/// each category (missing entries count as 0).
struct PatchSample {
  std::vector<std::string> categories;
  std::map<std::string, double> scores;
};

CategoryPriors estimate_priors(std::span<const PatchSample> patches);

struct DistanceHistograms {
  Eigen::VectorXd edges;
  Eigen::VectorXd same;
  Eigen::VectorXd not_same;
  long n_same = 0;
  long n_not_same = 0;

  double same_mass_below(double d) const;
  double not_same_mass_below(double d) const;
};

/// L1-normalized distance histograms of same-label and not-same pairs. An
/// empty population yields the uniform histogram.
DistanceHistograms pair_distance_stats(std::span<const PairSample> pairs, const Eigen::VectorXd& edges);

inline constexpr int kModelVersion = 1;
inline constexpr double kDefaultRidge = 1e-6;

struct DependencyModel {
  int version = kModelVersion;
  GammaParams gamma;
  CategoryPriors priors;
  DistanceParams distance;
  // Diagonal loading of C, relative to gamma_ss(0).
  double ridge = kDefaultRidge;

  void validate() const;
  friend bool operator==(const DependencyModel&, const DependencyModel&) = default;
};

std::string model_to_json(const DependencyModel& m);
DependencyModel model_from_json(const std::string& text);
void save_model(const DependencyModel& m, const std::filesystem::path& path);
DependencyModel load_model(const std::filesystem::path& path);

}  // namespace ciss
