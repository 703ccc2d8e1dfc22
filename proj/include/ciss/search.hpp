#pragma once

#include <vector>

#include "ciss/features.hpp"

namespace ciss {

struct SearchConfig {
  int n_max = 5;
  double d_max = 0.25;
  std::vector<double> scale_set = {0.8, 0.9, 1.0, 1.1, 1.2};
  int stride = 4;
  double max_overlap_iou = 0.0;
  int min_side = 15;

  void validate() const;
};

struct Supporter {
  Box box;
  double distance = 0.0;
  double score = 0.0;

  friend bool operator==(const Supporter&, const Supporter&) = default;
};

/// Greedy selection of up to n_max similar, mutually non-overlapping boxes
/// around an anchor, using summed-area tables for every candidate.
std::vector<Supporter> find_supporters(const IntegralStack& is, const Box& anchor,
                                       const DistanceParams& params, const SearchConfig& cfg);

/// Same contract as find_supporters, every descriptor summed pixel by pixel.
/// Only meant for small images.
std::vector<Supporter> find_supporters_bruteforce(const ChannelStack& cs, const Box& anchor,
                                                  const DistanceParams& params,
                                                  const SearchConfig& cfg);
std::vector<Supporter> find_supporters_bruteforce(const Image& img, const TextureSource& texture,
                                                  const Box& anchor, const DistanceParams& params,
                                                  const SearchConfig& cfg);

}  // namespace ciss
