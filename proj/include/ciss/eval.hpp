#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ciss/image.hpp"
#include "ciss/rescore.hpp"

namespace ciss {

struct GroundTruth {
  std::string image_id;
  std::string category;
  Box box;
  bool difficult = false;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// A detection as seen by the evaluator: box, category and the score column
/// under evaluation.
struct ScoredBox {
  std::string image_id;
  std::string category;
  Box box;
  double score = 0.0;
};

enum class MatchLabel { TP, FP, Ignored };

struct ErrorFilterConfig {
  enum class Mode { AllErrors, IgnoreLocSim };

  Mode mode = Mode::AllErrors;
  double loc_iou_lo = 0.1;
  double loc_iou_hi = 0.5;
  std::map<std::string, std::vector<std::string>> similarity_groups = default_similarity_groups();

  bool similar(const std::string& a, const std::string& b) const;
  void validate() const;

  static std::map<std::string, std::vector<std::string>> default_similarity_groups();
};

enum class ApMode { Area, Voc07 };

/// Greedy VOC matching. Detections are visited by descending score (ties by
/// input index); each takes the unclaimed same-category ground truth of
/// highest IoU.
std::vector<MatchLabel> match_detections(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts,
                                         double iou_thresh, const ErrorFilterConfig& filter);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PrResult {
  std::vector<PrPoint> curve;
  std::optional<double> ap;  // absent when there is no ground truth
  double f_best = 0.0;
  long n_gt = 0;
};

/// Cumulative precision/recall by descending score; IGNORED entries are
/// skipped.
PrResult pr_ap_f(std::span<const MatchLabel> labels, std::span<const double> scores, long n_gt, ApMode mode);

struct CategoryReport {
  PrResult pr;
  bool missing_in_ground_truth = false;
};

struct EvalReport {
  std::map<std::string, CategoryReport> per_category;
  std::optional<double> mean_ap;
  double mean_f = 0.0;
};

EvalReport evaluate(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts,
                    const ErrorFilterConfig& filter, ApMode mode, double iou_thresh = 0.5);

/// Indices of the survivors of greedy suppression, highest score first.
std::vector<std::size_t> greedy_nms_indices(std::span<const Box> boxes, std::span<const double> scores,
                                            double iou_thresh);
std::vector<ScoredBox> greedy_nms(std::span<const ScoredBox> dets, double iou_thresh);

}  // namespace ciss
