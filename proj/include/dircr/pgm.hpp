#pragma once

// Binary PGM (P5, 8-bit) images for panel dumps.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dircr::pgm {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Throws IoError on write failure, ConfigError if pixels do not match the size.
void write(const std::filesystem::path& path, const Image& img);
/// Throws IoError if unreadable, FormatError on anything but an 8-bit P5 file.
Image read(const std::filesystem::path& path);

}  // namespace dircr::pgm
