#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace icehrnet {

// Interleaved 8-bit RGB raster.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::uint8_t* at(int y, int x) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int y, int x) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool operator==(const RgbImage&) const = default;
};

// Single-channel class-index raster; 255 marks ignored pixels.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool operator==(const Mask&) const = default;
};

// PNG encoding. Masks are written as 8-bit grayscale and must decode from
// exactly that format; images accept 8-bit gray, RGB or RGBA (alpha dropped).
std::vector<std::uint8_t> encode_png(const RgbImage& image);
std::vector<std::uint8_t> encode_mask(const Mask& mask);
RgbImage decode_png_rgb(std::span<const std::uint8_t> bytes);
Mask decode_mask(std::span<const std::uint8_t> bytes);

void write_image(const std::filesystem::path& path, const RgbImage& image);
void write_mask(const std::filesystem::path& path, const Mask& mask);
RgbImage read_image(const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace icehrnet
