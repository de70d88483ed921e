#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bihl/image.hpp"

namespace bihl {

// Maximum accepted image dimension on any load path.
inline constexpr int kMaxImageDim = 10000;

// Loads an image file as a grayscale plane. The format is sniffed from the
// leading bytes: PGM (P5), PPM (P6), PNG, or JPEG. Color inputs go through
// to_grayscale. Throws Error("malformed") for unparsable or non-8-bit files,
// Error("too-large") when a dimension exceeds kMaxImageDim, and
// Error("io") when the file cannot be read.
ImagePlane load_image(const std::string& path);

// Binary PGM (P5), maxval 255. save_pgm writes no comment lines, so
// load->save of a comment-free P5 file reproduces it byte for byte.
void save_pgm(const ImagePlane& img, const std::string& path);

// 8-bit grayscale PNG.
void save_png(const ImagePlane& img, const std::string& path);

// Grayscale JPEG at the given quality (1..100).
void save_jpeg(const ImagePlane& img, const std::string& path, int quality);

// In-memory grayscale JPEG round trip, used by the compression perturbation.
std::vector<std::uint8_t> encode_jpeg(const ImagePlane& img, int quality);
ImagePlane decode_jpeg(const std::vector<std::uint8_t>& bytes);

}  // namespace bihl
