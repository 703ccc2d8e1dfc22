#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ciss/features.hpp"
#include "ciss/model.hpp"
#include "ciss/search.hpp"

namespace ciss {

struct Detection {
  std::string image_id;
  std::string category;
  Box box;
  double base_score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct AnchorConfig {
  double score_threshold = 0.05;
  int min_side = 15;
};

/// Clips b to a width x height image; the result may be empty.
Box clip_box(const Box& b, int width, int height);

bool is_anchor(const Detection& d, const AnchorConfig& cfg, int width, int height);

/// Base-scores for arbitrary boxes: either the mean of a dense per-category
/// score raster, or the score of the best-overlapping detection.
class ScoreProvider {
 public:
  enum class Mode { DenseMap, DetectionLookup };

  static ScoreProvider dense_maps(const std::map<std::string, ChannelRaster>& rasters);
  static ScoreProvider detection_lookup(std::vector<Detection> detections, double min_iou = 0.3);

  Mode mode() const { return mode_; }
  double score(const Box& box, const std::string& category) const;

 private:
  Mode mode_ = Mode::DetectionLookup;
  std::map<std::string, Eigen::ArrayXXd> integrals_;  // (h+1) x (w+1)
  std::vector<Detection> detections_;
  double min_iou_ = 0.3;
};

/// C m = R for an anchor and its supporters; index 0 is the anchor.
template <typename Scalar>
struct MmseSystem {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix C;
  Vector R;
  Vector s_vec;
  Vector es_vec;
  Scalar e_l = Scalar(0);

  Eigen::Index size() const { return R.size(); }
};

template <typename Scalar>
struct MmseSolution {
  typename MmseSystem<Scalar>::Vector m;
  // Set when the full solve failed and the supporter-free system was used.
  bool fallback = false;
};

template <typename Scalar>
Scalar mmse_residual(const MmseSystem<Scalar>& sys, const typename MmseSystem<Scalar>::Vector& m) {
  return (sys.C * m - sys.R).cwiseAbs().maxCoeff();
}

template <typename Scalar>
Scalar mmse_residual_bound(const MmseSystem<Scalar>& sys) {
  return Scalar(1e-9) * (Scalar(1) + sys.R.cwiseAbs().maxCoeff());
}

/// Solves C m = R with a pivoted LDL^T factorization. If the factorization
/// fails or the residual exceeds 1e-9 (1 + |R|_inf), only the anchor term of
/// the system is kept.
template <typename Scalar>
MmseSolution<Scalar> solve_mmse(const MmseSystem<Scalar>& sys) {
  using Vector = typename MmseSystem<Scalar>::Vector;
  MmseSolution<Scalar> out;
  const Eigen::Index n = sys.size();
  if (n > 1) {
    Eigen::LDLT<typename MmseSystem<Scalar>::Matrix> ldlt(sys.C);
    if (ldlt.info() == Eigen::Success) {
      Vector m = ldlt.solve(sys.R);
      // One refinement step against the original matrix.
      m += ldlt.solve(Vector(sys.R - sys.C * m));
      if (m.allFinite() && mmse_residual(sys, m) <= mmse_residual_bound(sys)) {
        out.m = std::move(m);
        return out;
      }
    }
    out.fallback = true;
  }
  out.m = Vector::Zero(n);
  out.m(0) = sys.R(0) / sys.C(0, 0);
  return out;
}

struct CissEstimate {
  double raw = 0.0;
  double clamped = 0.0;
};

/// p = E[l] + m . (s - E[s]); reported value clamped to [0,1].
template <typename Scalar>
CissEstimate rescore_anchor(const MmseSystem<Scalar>& sys, const typename MmseSystem<Scalar>::Vector& m) {
  const double p = static_cast<double>(sys.e_l + m.dot(sys.s_vec - sys.es_vec));
  return {p, std::clamp(p, 0.0, 1.0)};
}

/// Builds C and R from the fitted gamma curves. `pairwise` holds the patch
/// distances between supporters (symmetric, n x n).
MmseSystem<double> build_covariance_system(const Detection& anchor, std::span<const Supporter> supporters,
                                           const Eigen::MatrixXd& pairwise, const DependencyModel& model);

/// The supporter-free estimate s' for a base-score.
CissEstimate revised_base_score(double base_score, const std::string& category, const DependencyModel& model);

struct RescoreConfig {
  AnchorConfig anchor;
  SearchConfig search;
  int workers = 1;
};

struct RescoredDetection {
  Detection detection;
  bool anchor = false;
  double revised_base = 0.0;
  double revised_base_raw = 0.0;
  double ciss_score = 0.0;
  double ciss_raw = 0.0;
  bool fallback = false;
  std::vector<Supporter> supporters;
};

/// Rescores every detection of one image. Output order follows the input.
std::vector<RescoredDetection> rescore_image(const IntegralStack& is, std::span<const Detection> detections,
                                             const DependencyModel& model, const ScoreProvider& scores,
                                             const RescoreConfig& cfg);
std::vector<RescoredDetection> rescore_image(const Image& img, const TextureSource& texture,
                                             std::span<const Detection> detections,
                                             const DependencyModel& model, const ScoreProvider& scores,
                                             const RescoreConfig& cfg);

}  // namespace ciss
