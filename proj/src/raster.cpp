#include "ciss/raster.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "ciss/error.hpp"

namespace ciss {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'I', 'S', 'S', 'C', 'H', 'A', 'N'};

std::uint32_t load_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32_le(std::uint32_t v, unsigned char* p) {
  p[0] = static_cast<unsigned char>(v);
  p[1] = static_cast<unsigned char>(v >> 8);
  p[2] = static_cast<unsigned char>(v >> 16);
  p[3] = static_cast<unsigned char>(v >> 24);
}

}  // namespace

ChannelRaster read_channel_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  std::array<unsigned char, 20> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (in.gcount() != static_cast<std::streamsize>(header.size()))
    throw Error(ErrorCode::CorruptData, "truncated channel raster header: " + path.string());
  if (std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0)
    throw Error(ErrorCode::UnsupportedFormat, "bad channel raster magic: " + path.string());

  ChannelRaster r;
  r.width = load_u32_le(header.data() + 8);
  r.height = load_u32_le(header.data() + 12);
  r.channels = load_u32_le(header.data() + 16);
  if (r.width == 0 || r.height == 0 || r.channels == 0)
    throw Error(ErrorCode::CorruptData, "empty channel raster: " + path.string());
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
  std::vector<unsigned char> raw(4 * n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw Error(ErrorCode::CorruptData, "truncated channel raster data: " + path.string());
  r.values.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    r.values[i] = std::bit_cast<float>(load_u32_le(raw.data() + 4 * i));
  return r;
}

void write_channel_raster(const ChannelRaster& r, const std::filesystem::path& path) {
  if (r.values.size() != static_cast<std::size_t>(r.width) * r.height * r.channels)
    throw Error(ErrorCode::InvalidArgument, "channel raster value count mismatch");
  std::vector<unsigned char> bytes(20 + 4 * r.values.size());
  std::memcpy(bytes.data(), kMagic.data(), kMagic.size());
  store_u32_le(r.width, bytes.data() + 8);
  store_u32_le(r.height, bytes.data() + 12);
  store_u32_le(r.channels, bytes.data() + 16);
  for (std::size_t i = 0; i < r.values.size(); ++i)
    store_u32_le(std::bit_cast<std::uint32_t>(r.values[i]), bytes.data() + 20 + 4 * i);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

}  // namespace ciss
