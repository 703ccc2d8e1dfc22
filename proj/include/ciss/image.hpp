#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace ciss {

/// Axis-aligned pixel rectangle, half-open: columns [x, x+w), rows [y, y+h).
struct Box {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  long area() const { return static_cast<long>(w) * h; }
  int right() const { return x + w; }
  int bottom() const { return y + h; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline long intersection_area(const Box& a, const Box& b) {
  const long iw = std::max(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const long ih = std::max(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  return iw * ih;
}

/// Intersection over union; 0 for disjoint boxes.
inline double iou(const Box& a, const Box& b) {
  const long inter = intersection_area(a, b);
  if (inter == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

/// 8-bit RGB raster, row-major, interleaved.
class Image {
 public:
  Image() = default;
  Image(int width, int height);
  Image(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const { return width_; }
  int height() const { return height_; }

  const std::uint8_t* pixel(int x, int y) const {
    return pixels_.data() + 3 * (static_cast<std::size_t>(y) * width_ + x);
  }
  std::uint8_t* pixel(int x, int y) {
    return pixels_.data() + 3 * (static_cast<std::size_t>(y) * width_ + x);
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = pixel(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  const std::vector<std::uint8_t>& data() const { return pixels_; }

  bool contains(const Box& b) const {
    return b.w >= 1 && b.h >= 1 && b.x >= 0 && b.y >= 0 && b.right() <= width_ &&
           b.bottom() <= height_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Decodes binary PPM (P6, maxval 255) or PNG. Throws Error with
/// MissingFile, UnsupportedFormat or CorruptData.
Image load_image(const std::filesystem::path& path);

void save_ppm(const Image& img, const std::filesystem::path& path);

}  // namespace ciss
