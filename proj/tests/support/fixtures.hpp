#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "ciss/features.hpp"
#include "ciss/image.hpp"

namespace ciss::testing {

inline Image random_image(std::mt19937_64& rng, int width, int height) {
  Image img(width, height);
  std::uniform_int_distribution<int> px(0, 255);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      img.set(x, y, static_cast<std::uint8_t>(px(rng)), static_cast<std::uint8_t>(px(rng)),
              static_cast<std::uint8_t>(px(rng)));
  return img;
}

/// Blocky random texture: small enough palettes that similar patches exist.
inline Image blocky_image(std::mt19937_64& rng, int width, int height, int block) {
  Image img(width, height);
  std::uniform_int_distribution<int> pick(0, 3);
  const std::uint8_t palette[4][3] = {{200, 40, 40}, {40, 180, 60}, {30, 60, 200}, {220, 220, 220}};
  const int bw = (width + block - 1) / block, bh = (height + block - 1) / block;
  std::vector<int> cells(static_cast<std::size_t>(bw * bh));
  for (auto& c : cells) c = pick(rng);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto& p = palette[cells[static_cast<std::size_t>((y / block) * bw + x / block)]];
      img.set(x, y, p[0], p[1], p[2]);
    }
  return img;
}

inline Image uniform_image(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) img.set(x, y, r, g, b);
  return img;
}

inline Box random_box(std::mt19937_64& rng, int width, int height, int min_side = 1) {
  std::uniform_int_distribution<int> wd(min_side, width), hd(min_side, height);
  const int w = wd(rng), h = hd(rng);
  std::uniform_int_distribution<int> xd(0, width - w), yd(0, height - h);
  return {xd(rng), yd(rng), w, h};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ciss_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace ciss::testing
