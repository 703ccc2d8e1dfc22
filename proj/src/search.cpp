#include "ciss/search.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ciss {

void SearchConfig::validate() const {
  if (n_max < 0) throw Error(ErrorCode::InvalidArgument, "n_max must be >= 0");
  if (!(d_max >= 0.0)) throw Error(ErrorCode::InvalidArgument, "d_max must be >= 0");
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  if (min_side < 1) throw Error(ErrorCode::InvalidArgument, "min_side must be >= 1");
  if (!(max_overlap_iou >= 0.0 && max_overlap_iou < 1.0))
    throw Error(ErrorCode::InvalidArgument, "max_overlap_iou must be in [0,1)");
  if (scale_set.empty()) throw Error(ErrorCode::InvalidArgument, "scale_set is empty");
  for (double s : scale_set)
    if (!(s >= 0.8 - 1e-12 && s <= 1.2 + 1e-12))
      throw Error(ErrorCode::InvalidArgument, "scale multipliers must lie in [0.8, 1.2]");
}

namespace {

struct Candidate {
  Box box;
  double scale = 0.0;
  double distance = 0.0;
};

void check_anchor(int width, int height, const Box& anchor, const SearchConfig& cfg) {
  if (anchor.w < 1 || anchor.h < 1 || anchor.x < 0 || anchor.y < 0 || anchor.right() > width ||
      anchor.bottom() > height)
    throw Error(ErrorCode::OutOfBounds, "anchor outside image");
  if (anchor.w < cfg.min_side || anchor.h < cfg.min_side)
    throw Error(ErrorCode::AnchorTooSmall,
                "anchor smaller than min_side " + std::to_string(cfg.min_side));
}

// Enumerates every stride-aligned in-bounds candidate at every scale and
// hands it to `distance_of`.
template <typename DistanceFn>
std::vector<Candidate> score_candidates(int width, int height, const Box& anchor,
                                        const SearchConfig& cfg, DistanceFn&& distance_of) {
  std::vector<Candidate> out;
  std::vector<double> scales = cfg.scale_set;
  std::sort(scales.begin(), scales.end());
  scales.erase(std::unique(scales.begin(), scales.end()), scales.end());
  for (double s : scales) {
    const int cw = static_cast<int>(std::lround(s * anchor.w));
    const int ch = static_cast<int>(std::lround(s * anchor.h));
    if (cw < 1 || ch < 1 || cw > width || ch > height) continue;
    for (int y = 0; y + ch <= height; y += cfg.stride)
      for (int x = 0; x + cw <= width; x += cfg.stride) {
        const Box b{x, y, cw, ch};
        // Zero-tolerance overlap with the anchor can be rejected before describing.
        if (cfg.max_overlap_iou == 0.0 && intersection_area(b, anchor) > 0) continue;
        const double d = distance_of(b);
        if (d <= cfg.d_max) out.push_back({b, s, d});
      }
  }
  return out;
}

std::vector<Supporter> select_greedy(std::vector<Candidate> candidates, const Box& anchor,
                                     const SearchConfig& cfg) {
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.box.y != b.box.y) return a.box.y < b.box.y;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    return a.scale < b.scale;
  });
  std::vector<Supporter> chosen;
  for (const auto& c : candidates) {
    if (static_cast<int>(chosen.size()) >= cfg.n_max) break;
    if (iou(c.box, anchor) > cfg.max_overlap_iou) continue;
    const bool clashes = std::any_of(chosen.begin(), chosen.end(), [&](const Supporter& s) {
      return iou(c.box, s.box) > cfg.max_overlap_iou;
    });
    if (!clashes) chosen.push_back({c.box, c.distance, 0.0});
  }
  return chosen;
}

}  // namespace

std::vector<Supporter> find_supporters(const IntegralStack& is, const Box& anchor,
                                       const DistanceParams& params, const SearchConfig& cfg) {
  cfg.validate();
  check_anchor(is.width(), is.height(), anchor, cfg);
  if (cfg.n_max == 0) return {};
  const PatchDescriptor anchor_desc = describe_patch(is, anchor, params.pyramid);
  PatchDescriptor scratch;
  auto candidates = score_candidates(is.width(), is.height(), anchor, cfg, [&](const Box& b) {
    describe_patch(is, b, params.pyramid, scratch);
    return patch_distance(anchor_desc, scratch, params);
  });
  return select_greedy(std::move(candidates), anchor, cfg);
}

std::vector<Supporter> find_supporters_bruteforce(const ChannelStack& cs, const Box& anchor,
                                                  const DistanceParams& params,
                                                  const SearchConfig& cfg) {
  cfg.validate();
  check_anchor(cs.width, cs.height, anchor, cfg);
  if (cfg.n_max == 0) return {};
  const PatchDescriptor anchor_desc = describe_patch_direct(cs, anchor, params.pyramid);
  auto candidates = score_candidates(cs.width, cs.height, anchor, cfg, [&](const Box& b) {
    return patch_distance(anchor_desc, describe_patch_direct(cs, b, params.pyramid), params);
  });
  return select_greedy(std::move(candidates), anchor, cfg);
}

std::vector<Supporter> find_supporters_bruteforce(const Image& img, const TextureSource& texture,
                                                  const Box& anchor, const DistanceParams& params,
                                                  const SearchConfig& cfg) {
  return find_supporters_bruteforce(compute_channel_stack(img, texture), anchor, params, cfg);
}

}  // namespace ciss
