#include <png.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "bagclr/data.hpp"

namespace bagclr {

namespace {

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, png_uint_32 format,
                                   int& height, int& width) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw DataError("cannot read image " + path.string() + ": " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode image " + path.string() + ": " + img.message);
  }
  height = static_cast<int>(img.height);
  width = static_cast<int>(img.width);
  return buf;
}

void write_raw(const std::filesystem::path& path, png_uint_32 format, int height, int width,
               const std::vector<std::uint8_t>& buf) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw DataError("cannot write image " + path.string() + ": " + img.message);
}

std::uint8_t quantize(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<std::uint8_t>(c * 255.0f + 0.5f);
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const auto buf = read_raw(path, PNG_FORMAT_RGB, h, w);
  Image out(h, w, 3);
  for (std::size_t i = 0; i < buf.size(); ++i) out.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  return out;
}

Mask read_png_mask(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const auto buf = read_raw(path, PNG_FORMAT_GRAY, h, w);
  Mask out(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) out.bits[i] = buf[i] >= 128 ? 1 : 0;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw DataError("write_png supports 1 or 3 channels");
  std::vector<std::uint8_t> buf(image.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = quantize(image.pixels[i]);
  write_raw(path, image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, image.height,
            image.width, buf);
}

void write_png_mask(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> buf(mask.bits.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.bits[i] ? 255 : 0;
  write_raw(path, PNG_FORMAT_GRAY, mask.height, mask.width, buf);
}

}  // namespace bagclr
