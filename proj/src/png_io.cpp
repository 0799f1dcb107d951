#include "segattn/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "segattn/check.hpp"

namespace segattn {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::string& path, const std::uint8_t* data, int height,
               int width, int channels) {
  const std::string tmp = path + ".tmp";
  {
    FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + tmp);

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    SEGATTN_CHECK(png != nullptr, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width),
                 static_cast<png_uint_32>(height), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<std::uint8_t> row(static_cast<size_t>(width) * channels);
    const size_t plane = static_cast<size_t>(height) * width;
    for (int y = 0; y < height; ++y) {
      if (channels == 3) {
        for (int x = 0; x < width; ++x) {
          const size_t p = static_cast<size_t>(y) * width + x;
          row[static_cast<size_t>(x) * 3 + 0] = data[p];
          row[static_cast<size_t>(x) * 3 + 1] = data[plane + p];
          row[static_cast<size_t>(x) * 3 + 2] = data[2 * plane + p];
        }
      } else {
        std::copy_n(data + static_cast<size_t>(y) * width, width, row.begin());
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("rename failed: " + tmp + " -> " + path);
}

std::vector<std::uint8_t> read_png(const std::string& path, int* height,
                                   int* width, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open for reading: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw IoError("not a PNG file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  SEGATTN_CHECK(png != nullptr, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG file: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth != 8 ||
      color != (channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unexpected PNG format in " + path);
  }

  std::vector<std::uint8_t> interleaved(static_cast<size_t>(h) * w * channels);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] =
        interleaved.data() + static_cast<size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  *height = h;
  *width = w;
  if (channels == 1) return interleaved;

  std::vector<std::uint8_t> planar(interleaved.size());
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t p = 0; p < plane; ++p) {
    planar[p] = interleaved[p * 3 + 0];
    planar[plane + p] = interleaved[p * 3 + 1];
    planar[2 * plane + p] = interleaved[p * 3 + 2];
  }
  return planar;
}

}  // namespace

void write_png_rgb(const std::string& path, const std::uint8_t* planar_rgb,
                   int height, int width) {
  write_png(path, planar_rgb, height, width, 3);
}

std::vector<std::uint8_t> read_png_rgb(const std::string& path, int* height,
                                       int* width) {
  return read_png(path, height, width, 3);
}

void write_png_gray(const std::string& path, const std::uint8_t* gray,
                    int height, int width) {
  write_png(path, gray, height, width, 1);
}

std::vector<std::uint8_t> read_png_gray(const std::string& path, int* height,
                                        int* width) {
  return read_png(path, height, width, 1);
}

}  // namespace segattn
