#include "bihl/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "bihl/error.hpp"

namespace bihl {

namespace {

[[noreturn]] void fail_io(const std::string& path, const std::string& what) {
  throw Error("io", path + ": " + what);
}

[[noreturn]] void fail_malformed(const std::string& path, const std::string& what) {
  throw Error("malformed", path + ": " + what);
}

void check_dims(long w, long h, const std::string& path) {
  if (w < 1 || h < 1) fail_malformed(path, "non-positive image dimension");
  if (w > kMaxImageDim || h > kMaxImageDim)
    throw Error("too-large", path + ": dimension exceeds " +
                                 std::to_string(kMaxImageDim));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io(path, "cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) fail_io(path, "read error");
  return bytes;
}

// --- PNM (P5 / P6) ---------------------------------------------------------

// Reads the next header token, skipping whitespace and '#' comment lines.
bool pnm_token(const std::vector<std::uint8_t>& b, std::size_t& pos, long& value) {
  while (pos < b.size()) {
    if (std::isspace(b[pos])) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) return false;
  value = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    value = value * 10 + (b[pos] - '0');
    if (value > 1000000) return false;
    ++pos;
  }
  return true;
}

ImagePlane load_pnm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  const bool color = bytes[1] == '6';
  std::size_t pos = 2;
  long w = 0, h = 0, maxval = 0;
  if (!pnm_token(bytes, pos, w) || !pnm_token(bytes, pos, h) ||
      !pnm_token(bytes, pos, maxval))
    fail_malformed(path, "bad PNM header");
  if (maxval < 1 || maxval > 255)
    fail_malformed(path, "only 8-bit PNM supported (maxval " +
                             std::to_string(maxval) + ")");
  check_dims(w, h, path);
  ++pos;  // single whitespace byte after maxval
  const std::size_t npx = std::size_t(w) * std::size_t(h);
  const std::size_t need = npx * (color ? 3 : 1);
  if (pos + need > bytes.size()) fail_malformed(path, "truncated PNM pixel data");

  if (!color) {
    ImagePlane img{int(w), int(h)};
    std::memcpy(img.data.data(), bytes.data() + pos, npx);
    return img;
  }
  RgbImage rgb;
  rgb.width = int(w);
  rgb.height = int(h);
  rgb.data.assign(bytes.begin() + pos, bytes.begin() + pos + need);
  return to_grayscale(rgb);
}

// --- PNG -------------------------------------------------------------------

struct PngMemReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<PngMemReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->size) png_error(png, "read past end");
  std::memcpy(out, r->data + r->pos, n);
  r->pos += n;
}

ImagePlane load_png_bytes(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail_io(path, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail_io(path, "libpng init failed");
  }

  RgbImage rgb;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_malformed(path, "libpng decode error");
  }

  PngMemReader reader{bytes.data(), bytes.size(), 0};
  png_set_read_fn(png, &reader, png_mem_read);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  if (w > png_uint_32(kMaxImageDim) || h > png_uint_32(kMaxImageDim)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("too-large", path + ": dimension exceeds " + std::to_string(kMaxImageDim));
  }

  // Normalize every color type to 8-bit RGB, then share the luma path.
  png_byte color_type = png_get_color_type(png, info);
  png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  rgb.width = int(w);
  rgb.height = int(h);
  rgb.data.resize(std::size_t(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = rgb.data.data() + std::size_t(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  return to_grayscale(rgb);
}

// --- JPEG ------------------------------------------------------------------

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

}  // namespace

ImagePlane decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error("malformed", "jpeg decode error");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_GRAYSCALE;
  jpeg_start_decompress(&cinfo);
  if (cinfo.output_width > JDIMENSION(kMaxImageDim) ||
      cinfo.output_height > JDIMENSION(kMaxImageDim)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error("too-large", "jpeg dimension exceeds " + std::to_string(kMaxImageDim));
  }
  ImagePlane img(int(cinfo.output_width), int(cinfo.output_height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.row(int(cinfo.output_scanline));
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

std::vector<std::uint8_t> encode_jpeg(const ImagePlane& img, int quality) {
  if (img.empty()) throw Error("too-small", "encode_jpeg: empty image");
  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;

  unsigned char* buf = nullptr;
  unsigned long buf_size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    if (buf) free(buf);
    throw Error("malformed", "jpeg encode error");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &buf_size);
  cinfo.image_width = JDIMENSION(img.width);
  cinfo.image_height = JDIMENSION(img.height);
  cinfo.input_components = 1;
  cinfo.in_color_space = JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  ImagePlane& mut = const_cast<ImagePlane&>(img);  // libjpeg rows are non-const
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = mut.row(int(cinfo.next_scanline));
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<std::uint8_t> out(buf, buf + buf_size);
  free(buf);
  return out;
}

ImagePlane load_image(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
    return load_pnm(bytes, path);
  if (bytes.size() >= 4 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' &&
      bytes[3] == 'G')
    return load_png_bytes(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) {
    ImagePlane img = decode_jpeg(bytes);
    check_dims(img.width, img.height, path);
    return img;
  }
  fail_malformed(path, "unrecognized image format (want PGM P5, PPM P6, PNG, or JPEG)");
}

void save_pgm(const ImagePlane& img, const std::string& path) {
  if (img.empty()) throw Error("too-small", "save_pgm: empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_io(path, "cannot open for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            std::streamsize(img.data.size()));
  if (!out) fail_io(path, "write error");
}

void save_png(const ImagePlane& img, const std::string& path) {
  if (img.empty()) throw Error("too-small", "save_png: empty image");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail_io(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    if (png) png_destroy_write_struct(&png, nullptr);
    std::fclose(fp);
    fail_io(path, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail_io(path, "libpng encode error");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.row(y)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void save_jpeg(const ImagePlane& img, const std::string& path, int quality) {
  std::vector<std::uint8_t> bytes = encode_jpeg(img, quality);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_io(path, "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) fail_io(path, "write error");
}

}  // namespace bihl
