#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "ciss/error.hpp"
#include "ciss/image.hpp"
#include "ciss/raster.hpp"

namespace ciss {

inline constexpr int kColorBinsPerChannel = 10;
inline constexpr int kColorChannels = 3 * kColorBinsPerChannel;
inline constexpr int kFilterBankSize = 8;
inline constexpr double kChiSquareEpsilon = 1e-10;

// Texture responses are snapped to multiples of this quantum. With every
// channel value an integer number of quanta, summed-area lookups are exact
// and agree bit-for-bit with direct summation.
inline constexpr double kChannelQuantum = 1.0 / 65536.0;

inline double quantize_channel_value(double v) {
  return std::round(v / kChannelQuantum) * kChannelQuantum;
}

using PixelChannels = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ChannelLayout {
  int color = kColorChannels;
  int texture = kFilterBankSize;

  int total() const { return color + texture; }
  friend bool operator==(const ChannelLayout&, const ChannelLayout&) = default;
};

/// Where the texture channels of a stack come from.
struct TextureSource {
  enum class Kind { FilterBank, External };

  Kind kind = Kind::FilterBank;
  std::filesystem::path path;  // External only
  int channels = kFilterBankSize;

  static TextureSource filter_bank() { return {}; }
  static TextureSource external(std::filesystem::path p, int t) {
    return {Kind::External, std::move(p), t};
  }
};

/// Per-pixel non-negative channel values: HSV indicator channels first,
/// then texture responses. Row (y*width + x) holds the K values of a pixel.
struct ChannelStack {
  int width = 0;
  int height = 0;
  ChannelLayout layout;
  PixelChannels values;

  double at(int channel, int x, int y) const {
    return values(static_cast<Eigen::Index>(y) * width + x, channel);
  }
  bool contains(const Box& b) const {
    return b.w >= 1 && b.h >= 1 && b.x >= 0 && b.y >= 0 && b.right() <= width &&
           b.bottom() <= height;
  }
};

/// Summed-area tables for every channel of a stack, (width+1)x(height+1)
/// entries per channel, zero on the first row and column.
class IntegralStack {
 public:
  IntegralStack() = default;
  explicit IntegralStack(const ChannelStack& cs);

  int width() const { return width_; }
  int height() const { return height_; }
  const ChannelLayout& layout() const { return layout_; }

  bool contains(const Box& b) const {
    return b.w >= 1 && b.h >= 1 && b.x >= 0 && b.y >= 0 && b.right() <= width_ &&
           b.bottom() <= height_;
  }

  /// Integral value at corner (x, y), 0 <= x <= width, 0 <= y <= height.
  auto corner(int x, int y) const {
    return table_.row(static_cast<Eigen::Index>(y) * (width_ + 1) + x);
  }

  /// Per-channel sums over b; b may be empty (zero area) but must be in range.
  template <typename Derived>
  void box_sum(const Box& b, Eigen::MatrixBase<Derived>& out) const {
    out = corner(b.right(), b.bottom()) - corner(b.x, b.bottom()) - corner(b.right(), b.y) +
          corner(b.x, b.y);
  }
  Eigen::RowVectorXd box_sum(const Box& b) const {
    Eigen::RowVectorXd out(layout_.total());
    box_sum(b, out);
    return out;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  ChannelLayout layout_;
  PixelChannels table_;
};

struct HistogramPair {
  Eigen::VectorXd color;
  Eigen::VectorXd texture;
};

/// L1-normalized color and texture histograms of a patch, optionally with
/// the same pair for each cell of a 2x2 grid.
struct PatchDescriptor {
  HistogramPair whole;
  std::array<HistogramPair, 4> cells;
  bool pyramid = false;
};

struct DistanceParams {
  double alpha = 0.5;
  double beta = 0.5;
  bool pyramid = true;
  double pyramid_weight_whole = 0.5;
  double pyramid_weight_cells = 0.5;

  void validate() const;
  friend bool operator==(const DistanceParams&, const DistanceParams&) = default;
};

/// Builds the 30 HSV indicator channels and the texture channels of img.
ChannelStack compute_channel_stack(const Image& img, const TextureSource& source);
ChannelStack compute_channel_stack(const Image& img, const ChannelRaster& external_texture);

/// Standard RGB to HSV with every component in [0,1], H in [0,1).
std::array<double, 3> rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b);
int hsv_bin(double value);

/// The eight rectified filter-bank responses of an image's luma.
std::vector<Eigen::ArrayXXd> filter_bank_responses(const Image& img);

/// 2x2 split of b: integer halves, remainder to the right/bottom cells.
/// Order: top-left, top-right, bottom-left, bottom-right.
std::array<Box, 4> pyramid_cells(const Box& b);

PatchDescriptor describe_patch(const IntegralStack& is, const Box& b, bool pyramid);
void describe_patch(const IntegralStack& is, const Box& b, bool pyramid, PatchDescriptor& out);

/// Same descriptor as describe_patch, summed pixel by pixel. Reference path.
PatchDescriptor describe_patch_direct(const ChannelStack& cs, const Box& b, bool pyramid);

/// Turns raw per-channel box sums into a normalized histogram pair.
void normalize_box_sums(const Eigen::Ref<const Eigen::RowVectorXd>& sums, long area,
                        const ChannelLayout& layout, HistogramPair& out);

/// 0.5 * sum_k (p_k - q_k)^2 / (p_k + q_k + eps).
template <typename DerivedP, typename DerivedQ>
double chi_square(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
  if (p.size() != q.size())
    throw Error(ErrorCode::LengthMismatch, "chi_square: histogram lengths differ");
  return 0.5 * ((p.array() - q.array()).square() / (p.array() + q.array() + kChiSquareEpsilon))
                   .sum();
}

double patch_distance(const PatchDescriptor& a, const PatchDescriptor& b,
                      const DistanceParams& params);

}  // namespace ciss
