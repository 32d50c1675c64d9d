#include "uisim/image.hpp"

#include <png.h>

#include <cstring>

#include "uisim/codec.hpp"
#include "uisim/error.hpp"

namespace uisim {

Image::Image(int w, int h, Rgb fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3) {
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill.r;
    pixels[i + 1] = fill.g;
    pixels[i + 2] = fill.b;
  }
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (!image.valid()) throw Error(ErrorCode::kInvalidImage, "cannot encode an invalid image");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr))
    throw Error(ErrorCode::kInvalidImage, std::string("png encode failed: ") + png.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr))
    throw Error(ErrorCode::kInvalidImage, std::string("png encode failed: ") + png.message);
  out.resize(size);
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (bytes.empty() || !png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
    throw Error(ErrorCode::kInvalidImage,
                std::string("not a decodable PNG: ") + (bytes.empty() ? "empty" : png.message));
  png.format = PNG_FORMAT_RGB;
  if (png.width == 0 || png.height == 0 || png.width > 16384 || png.height > 16384) {
    png_image_free(&png);
    throw Error(ErrorCode::kInvalidImage, "PNG dimensions out of range");
  }
  Image image(static_cast<int>(png.width), static_cast<int>(png.height));
  // Transparent pixels are composited onto white.
  png_color background{255, 255, 255};
  if (!png_image_finish_read(&png, &background, image.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::kInvalidImage, "PNG decode failed: " + msg);
  }
  return image;
}

Image load_png(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidImage, e.what());
  }
  return decode_png(bytes);
}

void save_png(const Image& image, const std::filesystem::path& path) {
  write_file_atomic(path, encode_png(image));
}

}  // namespace uisim
