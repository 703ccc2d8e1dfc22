#include "ciss/eval.hpp"

#include <algorithm>
#include <numeric>

namespace ciss {

std::map<std::string, std::vector<std::string>> ErrorFilterConfig::default_similarity_groups() {
  return {
      {"animals", {"bird", "cat", "cow", "dog", "horse", "sheep", "person"}},
      {"vehicles", {"plane", "bike", "boat", "bus", "car", "motorbike", "train"}},
      {"furniture", {"chair", "table", "sofa"}},
  };
}

bool ErrorFilterConfig::similar(const std::string& a, const std::string& b) const {
  if (a == b) return false;
  for (const auto& [name, members] : similarity_groups) {
    const bool has_a = std::find(members.begin(), members.end(), a) != members.end();
    const bool has_b = std::find(members.begin(), members.end(), b) != members.end();
    if (has_a && has_b) return true;
  }
  return false;
}

void ErrorFilterConfig::validate() const {
  if (!(loc_iou_lo > 0.0 && loc_iou_lo < loc_iou_hi && loc_iou_hi < 1.0))
    throw Error(ErrorCode::InvalidArgument, "localization IoU band must lie within (0,1)");
}

namespace {

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::vector<MatchLabel> match_detections(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts,
                                         double iou_thresh, const ErrorFilterConfig& filter) {
  filter.validate();
  std::vector<double> scores(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) scores[i] = dets[i].score;
  const auto order = descending_order(scores);

  std::map<std::string, std::vector<std::size_t>> gts_by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) gts_by_image[gts[g].image_id].push_back(g);
  std::vector<bool> claimed(gts.size(), false);
  std::vector<MatchLabel> labels(dets.size(), MatchLabel::FP);
  const bool ignore_loc_sim = filter.mode == ErrorFilterConfig::Mode::IgnoreLocSim;

  for (std::size_t i : order) {
    const ScoredBox& d = dets[i];
    const auto it = gts_by_image.find(d.image_id);
    if (it == gts_by_image.end()) continue;  // FP: nothing annotated in this image

    double best = -1.0;
    std::size_t best_g = 0;
    double best_any_same = 0.0;
    double best_similar = 0.0;
    for (std::size_t g : it->second) {
      const GroundTruth& gt = gts[g];
      const double o = iou(d.box, gt.box);
      if (gt.category == d.category) {
        best_any_same = std::max(best_any_same, o);
        if (!claimed[g] && o > best) {
          best = o;
          best_g = g;
        }
      } else if (filter.similar(d.category, gt.category)) {
        best_similar = std::max(best_similar, o);
      }
    }

    if (best >= iou_thresh) {
      if (gts[best_g].difficult) {
        labels[i] = MatchLabel::Ignored;
      } else {
        labels[i] = MatchLabel::TP;
        claimed[best_g] = true;
      }
      continue;
    }
    // Localization errors include duplicates on an already claimed object.
    if (ignore_loc_sim && (best_any_same >= filter.loc_iou_lo || best_similar >= filter.loc_iou_lo))
      labels[i] = MatchLabel::Ignored;
  }
  return labels;
}

PrResult pr_ap_f(std::span<const MatchLabel> labels, std::span<const double> scores, long n_gt, ApMode mode) {
  if (labels.size() != scores.size())
    throw Error(ErrorCode::LengthMismatch, "labels and scores differ in length");
  PrResult out;
  out.n_gt = n_gt;
  const auto order = descending_order(scores);
  long tp = 0, fp = 0;
  std::vector<long> hits{0};  // true positives after each kept entry
  for (std::size_t i : order) {
    if (labels[i] == MatchLabel::Ignored) continue;
    (labels[i] == MatchLabel::TP ? tp : fp) += 1;
    hits.push_back(tp);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = n_gt > 0 ? static_cast<double>(tp) / static_cast<double>(n_gt) : 0.0;
    out.curve.push_back({scores[i], precision, recall});
    if (precision + recall > 0.0)
      out.f_best = std::max(out.f_best, 2.0 * precision * recall / (precision + recall));
  }
  if (n_gt <= 0) return out;

  if (mode == ApMode::Voc07) {
    double sum = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      double p = 0.0;
      for (const auto& pt : out.curve)
        if (pt.recall >= t) p = std::max(p, pt.precision);
      sum += p;
    }
    out.ap = sum / 11.0;
    return out;
  }
  // All-point area under the monotone precision envelope. Recall steps are
  // accumulated in true-positive counts and divided once.
  std::vector<double> prec{0.0};
  for (const auto& pt : out.curve) prec.push_back(pt.precision);
  for (std::size_t i = prec.size() - 1; i > 0; --i) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double area = 0.0;
  for (std::size_t i = 1; i < hits.size(); ++i)
    if (hits[i] != hits[i - 1]) area += static_cast<double>(hits[i] - hits[i - 1]) * prec[i];
  out.ap = area / static_cast<double>(n_gt);
  return out;
}

EvalReport evaluate(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts,
                    const ErrorFilterConfig& filter, ApMode mode, double iou_thresh) {
  const auto labels = match_detections(dets, gts, iou_thresh, filter);
  std::map<std::string, long> n_gt;
  for (const auto& g : gts) {
    auto& n = n_gt[g.category];
    if (!g.difficult) ++n;
  }
  std::map<std::string, std::pair<std::vector<MatchLabel>, std::vector<double>>> per_cat;
  for (const auto& [c, n] : n_gt) per_cat[c];
  for (std::size_t i = 0; i < dets.size(); ++i) {
    auto& [l, s] = per_cat[dets[i].category];
    l.push_back(labels[i]);
    s.push_back(dets[i].score);
  }
  EvalReport report;
  double ap_sum = 0.0, f_sum = 0.0;
  int n_defined = 0;
  for (const auto& [c, ls] : per_cat) {
    const auto it = n_gt.find(c);
    CategoryReport cr;
    cr.missing_in_ground_truth = it == n_gt.end();
    cr.pr = pr_ap_f(ls.first, ls.second, cr.missing_in_ground_truth ? 0 : it->second, mode);
    if (cr.pr.ap) {
      ap_sum += *cr.pr.ap;
      f_sum += cr.pr.f_best;
      ++n_defined;
    }
    report.per_category.emplace(c, std::move(cr));
  }
  if (n_defined > 0) {
    report.mean_ap = ap_sum / n_defined;
    report.mean_f = f_sum / n_defined;
  }
  return report;
}

std::vector<std::size_t> greedy_nms_indices(std::span<const Box> boxes, std::span<const double> scores,
                                            double iou_thresh) {
  if (boxes.size() != scores.size()) throw Error(ErrorCode::LengthMismatch, "boxes and scores differ in length");
  const auto order = descending_order(scores);
  std::vector<bool> suppressed(boxes.size(), false);
  std::vector<std::size_t> keep;
  for (std::size_t a = 0; a < order.size(); ++a) {
    const std::size_t i = order[a];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const std::size_t j = order[b];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) >= iou_thresh) suppressed[j] = true;
    }
  }
  return keep;
}

std::vector<ScoredBox> greedy_nms(std::span<const ScoredBox> dets, double iou_thresh) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& d : dets) {
    boxes.push_back(d.box);
    scores.push_back(d.score);
  }
  std::vector<ScoredBox> out;
  for (std::size_t i : greedy_nms_indices(boxes, scores, iou_thresh)) out.push_back(dets[i]);
  return out;
}

}  // namespace ciss
