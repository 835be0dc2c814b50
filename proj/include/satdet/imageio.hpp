#pragma once

#include <filesystem>

#include "satdet/image.hpp"

namespace satdet {

/// 16-bit grayscale. The format follows the extension: ".png" or ".pgm"
/// (binary P5, maxval 65535, big-endian samples).
void write_image16(const std::filesystem::path& path, const Image16& image);
/// Reads 8- or 16-bit grayscale PNG or P5 PGM; 8-bit samples are widened by 257.
Image16 read_image16(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const ImageRgb& image);
ImageRgb read_png_rgb(const std::filesystem::path& path);

} // namespace satdet
