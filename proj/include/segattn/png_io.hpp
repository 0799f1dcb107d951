#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace segattn {

// Lossless PNG persistence. RGB images are stored interleaved on disk but
// handled planar (3*H*W) in memory; masks are 8-bit grayscale class ids.
// Writers go through a temp file + rename so failures leave no partial file.

void write_png_rgb(const std::string& path, const std::uint8_t* planar_rgb,
                   int height, int width);
std::vector<std::uint8_t> read_png_rgb(const std::string& path, int* height,
                                       int* width);

void write_png_gray(const std::string& path, const std::uint8_t* gray,
                    int height, int width);
std::vector<std::uint8_t> read_png_gray(const std::string& path, int* height,
                                        int* width);

}  // namespace segattn
