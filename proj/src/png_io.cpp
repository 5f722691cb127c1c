#include "fssd/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "fssd/check.hpp"

namespace fssd {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const ImageRgb& image) {
  FSSD_CHECK(image.rgb.size() == static_cast<std::size_t>(image.width) * image.height * 3,
             "write_png: pixel buffer does not match " << image.width << "x" << image.height);
  FilePtr file(std::fopen(path.c_str(), "wb"));
  FSSD_CHECK(file, "write_png: cannot open '" << path << "'");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  FSSD_CHECK(png, "write_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("write_png: libpng error on '" + path + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(image.rgb.data() +
                                             static_cast<std::size_t>(y) * image.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageRgb read_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  FSSD_CHECK(file, "read_png: cannot open '" << path << "'");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  FSSD_CHECK(png, "read_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png: libpng error on '" + path + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  // normalize anything reasonable to 8-bit RGB
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  ImageRgb image;
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  FSSD_CHECK(png_get_rowbytes(png, info) == static_cast<std::size_t>(image.width) * 3,
             "read_png: '" << path << "' did not normalize to RGB");
  image.rgb.resize(static_cast<std::size_t>(image.width) * image.height * 3);
  for (int y = 0; y < image.height; ++y)
    png_read_row(png, image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

}  // namespace fssd
