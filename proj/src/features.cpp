#include "ciss/features.hpp"

#include <algorithm>
#include <cmath>

namespace ciss {

void DistanceParams::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0))
    throw Error(ErrorCode::InvalidArgument, "distance weights must be non-negative with alpha+beta > 0");
  if (pyramid) {
    if (!(pyramid_weight_whole >= 0.0) || !(pyramid_weight_cells >= 0.0) ||
        std::abs(pyramid_weight_whole + pyramid_weight_cells - 1.0) > 1e-9)
      throw Error(ErrorCode::InvalidArgument, "pyramid weights must be non-negative and sum to 1");
  }
}

std::array<double, 3> rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  double h = 0.0;
  if (delta > 0.0) {
    if (mx == r)
      h = std::fmod((g - b) / delta, 6.0);
    else if (mx == g)
      h = (b - r) / delta + 2.0;
    else
      h = (r - g) / delta + 4.0;
    h /= 6.0;
    if (h < 0.0) h += 1.0;
    if (h >= 1.0) h -= 1.0;
  }
  const double s = mx > 0.0 ? delta / mx : 0.0;
  return {h, s, mx};
}

int hsv_bin(double value) {
  const int bin = static_cast<int>(std::floor(value * kColorBinsPerChannel));
  return std::clamp(bin, 0, kColorBinsPerChannel - 1);
}

namespace {

using Plane = Eigen::ArrayXXd;  // rows = image rows

Eigen::ArrayXd gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  Eigen::ArrayXd k(2 * radius + 1);
  for (int t = -radius; t <= radius; ++t) k(t + radius) = std::exp(-0.5 * t * t / (sigma * sigma));
  return k / k.sum();
}

// Odd kernel; a rising ramp gives a positive correlation response.
Eigen::ArrayXd gaussian_derivative_kernel(double sigma) {
  const Eigen::ArrayXd g = gaussian_kernel(sigma);
  const int radius = static_cast<int>(g.size() / 2);
  Eigen::ArrayXd k = Eigen::ArrayXd::Zero(g.size());
  for (int t = 1; t <= radius; ++t) {
    const double v = sigma * t / (sigma * sigma) * g(radius + t);
    k(radius + t) = v;
    k(radius - t) = -v;
  }
  return k;
}

// Scale-normalized second derivative, forced to zero sum.
Eigen::ArrayXd gaussian_second_derivative_kernel(double sigma) {
  const Eigen::ArrayXd g = gaussian_kernel(sigma);
  const int radius = static_cast<int>(g.size() / 2);
  Eigen::ArrayXd k(g.size());
  for (int t = -radius; t <= radius; ++t)
    k(t + radius) = (t * t / (sigma * sigma) - 1.0) * g(t + radius);
  return k - k.mean();
}

Plane correlate_rows(const Plane& src, const Eigen::ArrayXd& k) {
  const int radius = static_cast<int>(k.size() / 2);
  const Eigen::Index w = src.cols();
  Plane out = Plane::Zero(src.rows(), w);
  for (int t = -radius; t <= radius; ++t) {
    const double kt = k(t + radius);
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index sx = std::clamp<Eigen::Index>(x + t, 0, w - 1);
      out.col(x) += kt * src.col(sx);
    }
  }
  return out;
}

Plane correlate_cols(const Plane& src, const Eigen::ArrayXd& k) {
  const int radius = static_cast<int>(k.size() / 2);
  const Eigen::Index h = src.rows();
  Plane out = Plane::Zero(h, src.cols());
  for (int t = -radius; t <= radius; ++t) {
    const double kt = k(t + radius);
    for (Eigen::Index y = 0; y < h; ++y) {
      const Eigen::Index sy = std::clamp<Eigen::Index>(y + t, 0, h - 1);
      out.row(y) += kt * src.row(sy);
    }
  }
  return out;
}

ChannelStack color_channels(const Image& img, int texture_channels) {
  ChannelStack cs;
  cs.width = img.width();
  cs.height = img.height();
  cs.layout = ChannelLayout{kColorChannels, texture_channels};
  cs.values = PixelChannels::Zero(static_cast<Eigen::Index>(cs.width) * cs.height, cs.layout.total());
  for (int y = 0; y < cs.height; ++y) {
    for (int x = 0; x < cs.width; ++x) {
      const auto* p = img.pixel(x, y);
      const auto hsv = rgb_to_hsv(p[0], p[1], p[2]);
      const Eigen::Index row = static_cast<Eigen::Index>(y) * cs.width + x;
      for (int c = 0; c < 3; ++c) cs.values(row, c * kColorBinsPerChannel + hsv_bin(hsv[c])) = 1.0;
    }
  }
  return cs;
}

}  // namespace

std::vector<Eigen::ArrayXXd> filter_bank_responses(const Image& img) {
  Plane gray(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const auto* p = img.pixel(x, y);
      gray(y, x) = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
    }

  const Eigen::ArrayXd g1 = gaussian_kernel(1.0), g2 = gaussian_kernel(2.0);
  const Eigen::ArrayXd d2 = gaussian_derivative_kernel(2.0);
  const Eigen::ArrayXd dd1 = gaussian_second_derivative_kernel(1.0);
  const Eigen::ArrayXd dd2 = gaussian_second_derivative_kernel(2.0);

  const Plane rows_g1 = correlate_rows(gray, g1);
  const Plane rows_g2 = correlate_rows(gray, g2);

  const Plane dx = correlate_cols(correlate_rows(gray, d2), g2);
  const Plane dy = correlate_cols(rows_g2, d2);
  const Plane log1 = correlate_cols(correlate_rows(gray, dd1), g1) + correlate_cols(rows_g1, dd1);
  const Plane log2 = correlate_cols(correlate_rows(gray, dd2), g2) + correlate_cols(rows_g2, dd2);

  std::vector<Eigen::ArrayXXd> out;
  out.reserve(kFilterBankSize);
  const double c45 = std::sqrt(0.5);
  out.push_back(dx.max(0.0));
  out.push_back((c45 * dx + c45 * dy).max(0.0));
  out.push_back(dy.max(0.0));
  out.push_back((-c45 * dx + c45 * dy).max(0.0));
  out.push_back(log1.max(0.0));
  out.push_back(log2.max(0.0));
  out.push_back(correlate_cols(rows_g1, g1).max(0.0));
  out.push_back(correlate_cols(rows_g2, g2).max(0.0));
  return out;
}

ChannelStack compute_channel_stack(const Image& img, const TextureSource& source) {
  if (source.kind == TextureSource::Kind::External) {
    const ChannelRaster raster = read_channel_raster(source.path);
    if (static_cast<int>(raster.channels) != source.channels)
      throw Error(ErrorCode::DimensionMismatch, "texture map channel count " +
                                                    std::to_string(raster.channels) + " != expected " +
                                                    std::to_string(source.channels));
    return compute_channel_stack(img, raster);
  }
  ChannelStack cs = color_channels(img, kFilterBankSize);
  const auto responses = filter_bank_responses(img);
  for (int t = 0; t < kFilterBankSize; ++t)
    for (int y = 0; y < cs.height; ++y)
      for (int x = 0; x < cs.width; ++x)
        cs.values(static_cast<Eigen::Index>(y) * cs.width + x, kColorChannels + t) =
            quantize_channel_value(responses[t](y, x));
  return cs;
}

ChannelStack compute_channel_stack(const Image& img, const ChannelRaster& raster) {
  if (static_cast<int>(raster.width) != img.width() || static_cast<int>(raster.height) != img.height())
    throw Error(ErrorCode::DimensionMismatch, "texture map size does not match image");
  if (raster.channels == 0) throw Error(ErrorCode::DimensionMismatch, "texture map has no channels");
  ChannelStack cs = color_channels(img, static_cast<int>(raster.channels));
  for (std::uint32_t t = 0; t < raster.channels; ++t)
    for (std::uint32_t y = 0; y < raster.height; ++y)
      for (std::uint32_t x = 0; x < raster.width; ++x) {
        const double v = raster.at(t, x, y);
        if (!std::isfinite(v)) throw Error(ErrorCode::CorruptData, "non-finite texture map value");
        cs.values(static_cast<Eigen::Index>(y) * cs.width + x, kColorChannels + t) =
            quantize_channel_value(std::max(0.0, v));
      }
  return cs;
}

IntegralStack::IntegralStack(const ChannelStack& cs)
    : width_(cs.width), height_(cs.height), layout_(cs.layout) {
  const Eigen::Index k = layout_.total();
  table_ = PixelChannels::Zero(static_cast<Eigen::Index>(width_ + 1) * (height_ + 1), k);
  Eigen::RowVectorXd row_sum(k);
  for (int y = 0; y < height_; ++y) {
    row_sum.setZero();
    for (int x = 0; x < width_; ++x) {
      row_sum += cs.values.row(static_cast<Eigen::Index>(y) * width_ + x);
      table_.row(static_cast<Eigen::Index>(y + 1) * (width_ + 1) + x + 1) =
          table_.row(static_cast<Eigen::Index>(y) * (width_ + 1) + x + 1) + row_sum;
    }
  }
}

std::array<Box, 4> pyramid_cells(const Box& b) {
  const int w0 = b.w / 2, h0 = b.h / 2;
  const int w1 = b.w - w0, h1 = b.h - h0;
  return {Box{b.x, b.y, w0, h0}, Box{b.x + w0, b.y, w1, h0}, Box{b.x, b.y + h0, w0, h1},
          Box{b.x + w0, b.y + h0, w1, h1}};
}

void normalize_box_sums(const Eigen::Ref<const Eigen::RowVectorXd>& sums, long area,
                        const ChannelLayout& layout, HistogramPair& out) {
  out.color = sums.head(layout.color).transpose();
  const double color_total = out.color.sum();
  if (color_total > 0.0)
    out.color /= color_total;
  else
    out.color.setConstant(1.0 / layout.color);

  if (area > 0)
    out.texture = sums.tail(layout.texture).transpose() / static_cast<double>(area);
  else
    out.texture = Eigen::VectorXd::Zero(layout.texture);
  const double texture_total = out.texture.sum();
  if (texture_total > 0.0)
    out.texture /= texture_total;
  else
    out.texture.setConstant(1.0 / layout.texture);
}

void describe_patch(const IntegralStack& is, const Box& b, bool pyramid, PatchDescriptor& out) {
  if (!is.contains(b)) throw Error(ErrorCode::OutOfBounds, "patch box outside image");
  Eigen::RowVectorXd sums(is.layout().total());
  is.box_sum(b, sums);
  normalize_box_sums(sums, b.area(), is.layout(), out.whole);
  out.pyramid = pyramid;
  if (!pyramid) return;
  const auto cells = pyramid_cells(b);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    is.box_sum(cells[i], sums);
    normalize_box_sums(sums, cells[i].area(), is.layout(), out.cells[i]);
  }
}

PatchDescriptor describe_patch(const IntegralStack& is, const Box& b, bool pyramid) {
  PatchDescriptor d;
  describe_patch(is, b, pyramid, d);
  return d;
}

PatchDescriptor describe_patch_direct(const ChannelStack& cs, const Box& b, bool pyramid) {
  if (!cs.contains(b)) throw Error(ErrorCode::OutOfBounds, "patch box outside image");
  auto direct_sum = [&cs](const Box& r) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(cs.layout.total());
    for (int y = r.y; y < r.bottom(); ++y)
      for (int x = r.x; x < r.right(); ++x) acc += cs.values.row(static_cast<Eigen::Index>(y) * cs.width + x);
    return acc;
  };
  PatchDescriptor d;
  d.pyramid = pyramid;
  normalize_box_sums(direct_sum(b), b.area(), cs.layout, d.whole);
  if (pyramid) {
    const auto cells = pyramid_cells(b);
    for (std::size_t i = 0; i < cells.size(); ++i)
      normalize_box_sums(direct_sum(cells[i]), cells[i].area(), cs.layout, d.cells[i]);
  }
  return d;
}

namespace {

double weighted_term(const HistogramPair& a, const HistogramPair& b, const DistanceParams& p) {
  return p.alpha * chi_square(a.color, b.color) + p.beta * chi_square(a.texture, b.texture);
}

}  // namespace

double patch_distance(const PatchDescriptor& a, const PatchDescriptor& b, const DistanceParams& params) {
  if (a.pyramid != b.pyramid || a.pyramid != params.pyramid ||
      a.whole.color.size() != b.whole.color.size() || a.whole.texture.size() != b.whole.texture.size())
    throw Error(ErrorCode::LayoutMismatch, "descriptors built with different layouts");
  const double whole = weighted_term(a.whole, b.whole, params);
  if (!params.pyramid) return whole;
  double cells = 0.0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) cells += weighted_term(a.cells[i], b.cells[i], params);
  return params.pyramid_weight_whole * whole + params.pyramid_weight_cells * (cells / 4.0);
}

}  // namespace ciss
