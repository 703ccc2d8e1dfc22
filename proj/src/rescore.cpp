#include "ciss/rescore.hpp"

#include <algorithm>

#include "ciss/parallel.hpp"

namespace ciss {

Box clip_box(const Box& b, int width, int height) {
  const int x0 = std::clamp(b.x, 0, width), y0 = std::clamp(b.y, 0, height);
  const int x1 = std::clamp(b.right(), 0, width), y1 = std::clamp(b.bottom(), 0, height);
  return {x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

bool is_anchor(const Detection& d, const AnchorConfig& cfg, int width, int height) {
  const Box b = clip_box(d.box, width, height);
  return d.base_score > cfg.score_threshold && std::min(b.w, b.h) > cfg.min_side;
}

ScoreProvider ScoreProvider::dense_maps(const std::map<std::string, ChannelRaster>& rasters) {
  ScoreProvider sp;
  sp.mode_ = Mode::DenseMap;
  for (const auto& [category, r] : rasters) {
    if (r.channels != 1)
      throw Error(ErrorCode::DimensionMismatch, "score raster for '" + category + "' must have one channel");
    Eigen::ArrayXXd table = Eigen::ArrayXXd::Zero(r.height + 1, r.width + 1);
    for (std::uint32_t y = 0; y < r.height; ++y) {
      double row = 0.0;
      for (std::uint32_t x = 0; x < r.width; ++x) {
        row += r.at(0, x, y);
        table(y + 1, x + 1) = table(y, x + 1) + row;
      }
    }
    sp.integrals_.emplace(category, std::move(table));
  }
  return sp;
}

ScoreProvider ScoreProvider::detection_lookup(std::vector<Detection> detections, double min_iou) {
  if (!(min_iou > 0.0 && min_iou <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "lookup IoU threshold must lie in (0,1]");
  ScoreProvider sp;
  sp.mode_ = Mode::DetectionLookup;
  sp.detections_ = std::move(detections);
  sp.min_iou_ = min_iou;
  return sp;
}

double ScoreProvider::score(const Box& box, const std::string& category) const {
  if (mode_ == Mode::DenseMap) {
    const auto it = integrals_.find(category);
    if (it == integrals_.end())
      throw Error(ErrorCode::MissingCategory, "no score raster for category '" + category + "'");
    const Eigen::ArrayXXd& t = it->second;
    if (box.w < 1 || box.h < 1 || box.x < 0 || box.y < 0 || box.bottom() >= t.rows() ||
        box.right() >= t.cols())
      throw Error(ErrorCode::OutOfBounds, "score lookup box outside raster");
    const double sum = t(box.bottom(), box.right()) - t(box.y, box.right()) - t(box.bottom(), box.x) +
                       t(box.y, box.x);
    return sum / static_cast<double>(box.area());
  }
  double best_iou = 0.0, best_score = 0.0;
  for (const auto& d : detections_) {
    if (d.category != category) continue;
    const double o = iou(box, d.box);
    if (o >= min_iou_ && o > best_iou) {
      best_iou = o;
      best_score = d.base_score;
    }
  }
  return best_score;
}

MmseSystem<double> build_covariance_system(const Detection& anchor, std::span<const Supporter> supporters,
                                           const Eigen::MatrixXd& pairwise, const DependencyModel& model) {
  const double g0 = model.gamma.ss(0.0);
  if (!(g0 > 0.0)) throw Error(ErrorCode::InvariantViolation, "gamma_ss(0) must be positive");
  const auto n = static_cast<Eigen::Index>(supporters.size());
  if (pairwise.rows() != n || pairwise.cols() != n)
    throw Error(ErrorCode::DimensionMismatch, "pairwise distance matrix does not match supporter count");
  const double diag = g0 * (1.0 + model.ridge);
  const CategoryPrior& prior = model.priors.lookup(anchor.category);

  MmseSystem<double> sys;
  sys.C.resize(n + 1, n + 1);
  sys.R.resize(n + 1);
  sys.s_vec.resize(n + 1);
  sys.C(0, 0) = diag;
  sys.R(0) = model.gamma.ls(0.0);
  sys.s_vec(0) = anchor.base_score;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Supporter& sj = supporters[static_cast<std::size_t>(j)];
    sys.C(0, j + 1) = sys.C(j + 1, 0) = model.gamma.ss(sj.distance);
    sys.R(j + 1) = model.gamma.ls(sj.distance);
    sys.s_vec(j + 1) = sj.score;
    sys.C(j + 1, j + 1) = diag;
    for (Eigen::Index k = j + 1; k < n; ++k)
      sys.C(j + 1, k + 1) = sys.C(k + 1, j + 1) = model.gamma.ss(0.5 * (pairwise(j, k) + pairwise(k, j)));
  }
  sys.es_vec = Eigen::VectorXd::Constant(n + 1, prior.e_s);
  sys.e_l = prior.e_l;
  return sys;
}

CissEstimate revised_base_score(double base_score, const std::string& category, const DependencyModel& model) {
  const Detection d{"", category, {}, base_score};
  const auto sys = build_covariance_system(d, {}, Eigen::MatrixXd(0, 0), model);
  return rescore_anchor(sys, solve_mmse(sys).m);
}

std::vector<RescoredDetection> rescore_image(const IntegralStack& is, std::span<const Detection> detections,
                                             const DependencyModel& model, const ScoreProvider& scores,
                                             const RescoreConfig& cfg) {
  model.validate();
  cfg.search.validate();
  std::vector<RescoredDetection> out(detections.size());
  parallel_for(detections.size(), cfg.workers, [&](std::size_t i) {
    RescoredDetection& r = out[i];
    r.detection = detections[i];
    const CissEstimate revised = revised_base_score(r.detection.base_score, r.detection.category, model);
    r.revised_base = revised.clamped;
    r.revised_base_raw = revised.raw;
    r.ciss_score = revised.clamped;
    r.ciss_raw = revised.raw;
    r.anchor = is_anchor(r.detection, cfg.anchor, is.width(), is.height());
    if (!r.anchor) return;
    try {
      const Box box = clip_box(r.detection.box, is.width(), is.height());
      r.supporters = find_supporters(is, box, model.distance, cfg.search);
      const auto n = static_cast<Eigen::Index>(r.supporters.size());
      std::vector<PatchDescriptor> desc(r.supporters.size());
      for (std::size_t j = 0; j < r.supporters.size(); ++j) {
        r.supporters[j].score = scores.score(r.supporters[j].box, r.detection.category);
        describe_patch(is, r.supporters[j].box, model.distance.pyramid, desc[j]);
      }
      Eigen::MatrixXd pairwise = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index k = j + 1; k < n; ++k)
          pairwise(j, k) = pairwise(k, j) =
              patch_distance(desc[static_cast<std::size_t>(j)], desc[static_cast<std::size_t>(k)], model.distance);
      const auto sys = build_covariance_system(r.detection, r.supporters, pairwise, model);
      const auto sol = solve_mmse(sys);
      const CissEstimate p = rescore_anchor(sys, sol.m);
      r.ciss_raw = p.raw;
      r.ciss_score = p.clamped;
      r.fallback = sol.fallback;
    } catch (const Error&) {
      r.fallback = true;
      r.supporters.clear();
      r.ciss_score = r.revised_base;
      r.ciss_raw = r.revised_base_raw;
    }
  });
  return out;
}

std::vector<RescoredDetection> rescore_image(const Image& img, const TextureSource& texture,
                                             std::span<const Detection> detections,
                                             const DependencyModel& model, const ScoreProvider& scores,
                                             const RescoreConfig& cfg) {
  const IntegralStack is(compute_channel_stack(img, texture));
  return rescore_image(is, detections, model, scores, cfg);
}

}  // namespace ciss
