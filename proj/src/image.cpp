#include "ciss/image.hpp"

#include <array>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <png.h>

#include "ciss/error.hpp"

namespace ciss {

Image::Image(int width, int height)
    : Image(width, height,
            std::vector<std::uint8_t>(3 * static_cast<std::size_t>(std::max(width, 0)) *
                                      static_cast<std::size_t>(std::max(height, 0)))) {}

Image::Image(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width < 1 || height < 1)
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  if (pixels_.size() != 3 * static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw Error(ErrorCode::InvalidArgument, "pixel buffer does not match 3*width*height");
}

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class PpmReader {
 public:
  explicit PpmReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  Image read() {
    if (bytes_.size() < 2 || bytes_[0] != 'P')
      throw Error(ErrorCode::CorruptData, "not a PPM stream");
    if (bytes_[1] != '6') throw Error(ErrorCode::UnsupportedFormat, "only binary P6 PPM is supported");
    pos_ = 2;
    const long width = next_int();
    const long height = next_int();
    const long maxval = next_int();
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw Error(ErrorCode::CorruptData, "truncated PPM header");
    ++pos_;
    if (width < 1 || height < 1 || width > (1 << 20) || height > (1 << 20))
      throw Error(ErrorCode::CorruptData, "invalid PPM dimensions");
    if (maxval != 255) throw Error(ErrorCode::UnsupportedFormat, "only 8-bit PPM is supported");
    const std::size_t n = 3 * static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::CorruptData, "truncated PPM pixel data");
    std::vector<std::uint8_t> pixels(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    return Image(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  long next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_]))
      throw Error(ErrorCode::CorruptData, "truncated PPM header");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1L << 30)) throw Error(ErrorCode::CorruptData, "PPM header value overflow");
      ++pos_;
    }
    return v;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
    throw Error(ErrorCode::CorruptData, std::string("PNG: ") + png.message);
  png.format = PNG_FORMAT_RGB;
  if (png.width < 1 || png.height < 1) {
    png_image_free(&png);
    throw Error(ErrorCode::CorruptData, "PNG: empty image");
  }
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::CorruptData, "PNG: " + msg);
  }
  return Image(static_cast<int>(png.width), static_cast<int>(png.height), std::move(pixels));
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw Error(ErrorCode::MissingFile, "no such file: " + path.string());
  const auto bytes = read_all(path);
  static constexpr std::array<std::uint8_t, 8> kPngMagic = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= kPngMagic.size() && std::equal(kPngMagic.begin(), kPngMagic.end(), bytes.begin()))
    return decode_png(bytes);
  if (!bytes.empty() && bytes[0] == 'P') return PpmReader(bytes).read();
  throw Error(ErrorCode::UnsupportedFormat, "unrecognized image format: " + path.string());
}

void save_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data().data()),
            static_cast<std::streamsize>(img.data().size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

}  // namespace ciss
