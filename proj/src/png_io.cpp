#include "bedexit/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "bedexit/error.hpp"
#include "bedexit/io.hpp"

namespace bedexit::png {

std::vector<std::uint8_t> to_rgb8(const imaging::ImageTensor& image) {
  require(image.channels == 3, ErrorCode::invalid_argument, "PNG: only 3-channel images are supported");
  std::vector<std::uint8_t> out(image.values.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.values[i], 0.0f, 1.0f) * 255.0f));
  return out;
}

namespace {

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

// libpng reports errors by longjmp; these two functions keep only trivially
// destructible locals between setjmp and the library calls.
bool encode_rows(const std::uint8_t* rgb, int width, int height, std::vector<std::uint8_t>* out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, out, write_to_vector, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * 3;
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb + static_cast<std::size_t>(y) * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

enum class ReadStatus { ok, error, not_rgb8 };

ReadStatus decode_rows(FILE* fp, int* width, int* height, std::vector<std::uint8_t>* pixels) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) return ReadStatus::error;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return ReadStatus::error;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) != 8 || png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    return ReadStatus::not_rgb8;
  }
  *width = static_cast<int>(png_get_image_width(png, info));
  *height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = static_cast<std::size_t>(*width) * 3;
  pixels->resize(stride * static_cast<std::size_t>(*height));
  for (int y = 0; y < *height; ++y) png_read_row(png, pixels->data() + static_cast<std::size_t>(y) * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return ReadStatus::ok;
}

}  // namespace

std::vector<std::uint8_t> encode_rgb8(const imaging::ImageTensor& image) {
  const auto rgb = to_rgb8(image);
  std::vector<std::uint8_t> out;
  require(encode_rows(rgb.data(), image.width, image.height, &out), ErrorCode::io, "PNG: encoding failed");
  return out;
}

void write_rgb8(const std::filesystem::path& path, const imaging::ImageTensor& image) {
  const auto bytes = encode_rgb8(image);
  io::write_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

imaging::ImageTensor read_rgb8(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  require(fp != nullptr, ErrorCode::io, "PNG: cannot open " + path.string());
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
  const auto status = decode_rows(fp.get(), &width, &height, &pixels);
  require(status != ReadStatus::not_rgb8, ErrorCode::format, "PNG: " + path.string() + " is not 8-bit RGB");
  require(status == ReadStatus::ok, ErrorCode::format, "PNG: cannot decode " + path.string());
  imaging::ImageTensor image(height, width, 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) image.values[i] = static_cast<float>(pixels[i]) / 255.0f;
  return image;
}

}  // namespace bedexit::png
