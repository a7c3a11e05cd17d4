#include "asiseg/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "asiseg/error.hpp"

namespace asiseg {

namespace {

struct FileCloser {
  void operator()(FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<FILE, FileCloser>;

File open_file(const std::string& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  check(f != nullptr, ErrorCode::kIo, "cannot open " + path);
  return f;
}

[[noreturn]] void png_fail(png_structp, png_const_charp message) { fail(ErrorCode::kIo, message); }
void png_warn(png_structp, png_const_charp) {}

}  // namespace

torch::Tensor read_png(const std::string& path) {
  auto file = open_file(path, "rb");
  unsigned char signature[8];
  check(std::fread(signature, 1, 8, file.get()) == 8 && png_sig_cmp(signature, 0, 8) == 0, ErrorCode::kIo,
        path + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  try {
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int64_t h = png_get_image_height(png, info), w = png_get_image_width(png, info);
    const int64_t c = png_get_channels(png, info);
    auto out = torch::empty({h, w, c}, torch::kUInt8);
    std::vector<png_bytep> rows(h);
    for (int64_t y = 0; y < h; ++y) rows[y] = out.data_ptr<uint8_t>() + y * w * c;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return out;
  } catch (const Error& e) {
    fail(ErrorCode::kIo, path + ": " + e.what());
  }
}

void write_png(const std::string& path, const torch::Tensor& image) {
  check(image.scalar_type() == torch::kUInt8, ErrorCode::kArgument, "PNG writer expects uint8 data");
  check(image.dim() == 2 || (image.dim() == 3 && image.size(2) == 3), ErrorCode::kShape,
        "PNG writer expects [H, W] or [H, W, 3]");
  auto data = image.contiguous();
  const int64_t h = data.size(0), w = data.size(1), c = data.dim() == 2 ? 1 : 3;
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int64_t y = 0; y < h; ++y) rows[y] = data.data_ptr<uint8_t>() + y * w * c;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
}

}  // namespace asiseg
