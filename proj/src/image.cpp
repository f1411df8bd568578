#include "icehrnet/image.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "icehrnet/error.hpp"

namespace icehrnet {

namespace {

struct PngImage {
  png_image image;
  PngImage() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

std::vector<std::uint8_t> write_png(int height, int width, png_uint_32 format, const std::uint8_t* data) {
  if (height <= 0 || width <= 0) throw ValidationError("cannot encode an empty raster");
  PngImage png;
  png.image.width = static_cast<png_uint_32>(width);
  png.image.height = static_cast<png_uint_32>(height);
  png.image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.image, nullptr, &size, 0, data, 0, nullptr)) {
    throw IoError(std::string("png sizing failed: ") + png.image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png.image, out.data(), &size, 0, data, 0, nullptr)) {
    throw IoError(std::string("png encoding failed: ") + png.image.message);
  }
  out.resize(size);
  return out;
}

void begin_read(PngImage& png, std::span<const std::uint8_t> bytes) {
  if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size())) {
    throw ValidationError(std::string("png decoding failed: ") + png.image.message);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  if (image.pixels.size() != image.pixel_count() * 3) throw ValidationError("rgb buffer size mismatch");
  return write_png(image.height, image.width, PNG_FORMAT_RGB, image.pixels.data());
}

std::vector<std::uint8_t> encode_mask(const Mask& mask) {
  if (mask.labels.size() != mask.pixel_count()) throw ValidationError("mask buffer size mismatch");
  return write_png(mask.height, mask.width, PNG_FORMAT_GRAY, mask.labels.data());
}

RgbImage decode_png_rgb(std::span<const std::uint8_t> bytes) {
  PngImage png;
  begin_read(png, bytes);
  if (png.image.format & PNG_FORMAT_FLAG_LINEAR) throw ValidationError("unsupported image bit depth (16-bit)");
  png.image.format = PNG_FORMAT_RGB;
  RgbImage out(static_cast<int>(png.image.height), static_cast<int>(png.image.width));
  if (!png_image_finish_read(&png.image, nullptr, out.pixels.data(), 0, nullptr)) {
    throw ValidationError(std::string("png decoding failed: ") + png.image.message);
  }
  return out;
}

Mask decode_mask(std::span<const std::uint8_t> bytes) {
  PngImage png;
  begin_read(png, bytes);
  const png_uint_32 f = png.image.format;
  if (f & PNG_FORMAT_FLAG_LINEAR) throw ValidationError("unsupported mask bit depth (16-bit)");
  if (f & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA)) {
    throw ValidationError("mask file has more than one channel");
  }
  if (f & PNG_FORMAT_FLAG_COLORMAP) throw ValidationError("palette masks are not supported");
  png.image.format = PNG_FORMAT_GRAY;
  Mask out(static_cast<int>(png.image.height), static_cast<int>(png.image.width));
  if (!png_image_finish_read(&png.image, nullptr, out.labels.data(), 0, nullptr)) {
    throw ValidationError(std::string("png decoding failed: ") + png.image.message);
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_image(const std::filesystem::path& path, const RgbImage& image) {
  write_file_bytes(path, encode_png(image));
}

void write_mask(const std::filesystem::path& path, const Mask& mask) { write_file_bytes(path, encode_mask(mask)); }

RgbImage read_image(const std::filesystem::path& path) {
  try {
    return decode_png_rgb(read_file_bytes(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

Mask read_mask(const std::filesystem::path& path) {
  try {
    return decode_mask(read_file_bytes(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace icehrnet
