#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ciss {

/// Multi-channel float raster in the CISSCHAN layout: channel-major, then
/// row-major within a channel.
struct ChannelRaster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::vector<float> values;

  float at(std::uint32_t c, std::uint32_t x, std::uint32_t y) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  friend bool operator==(const ChannelRaster&, const ChannelRaster&) = default;
};

// File layout: "CISSCHAN", u32 width, u32 height, u32 channels (all
// little-endian), then channels*height*width little-endian f32.
ChannelRaster read_channel_raster(const std::filesystem::path& path);
void write_channel_raster(const ChannelRaster& raster, const std::filesystem::path& path);

}  // namespace ciss
