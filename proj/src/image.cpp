#include "udm/image.hpp"

#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <memory>

#include <jpeglib.h>

namespace udm {

Image::Image(torch::Tensor chw, std::string source_id)
    : source_id_(std::move(source_id)) {
  if (!chw.defined()) throw InputError("Image: undefined tensor");
  if (chw.dim() != 3 || chw.size(0) != 3)
    throw ShapeError("Image: expected [3,H,W], got " + std::to_string(chw.dim()) + "-d");
  chw_ = chw.to(torch::kFloat32).clamp(0.0, 1.0).contiguous();
}

void Image::require_pipeline_size() const {
  if (height() < 32 || width() < 32)
    throw SizeError("image too small for pipeline: " + std::to_string(height()) + "x" +
                    std::to_string(width()) + " (need >= 32x32)");
}

std::vector<std::uint8_t> Image::to_u8_rgb() const {
  auto u8 = (chw_ * 255.0f).round().clamp(0, 255).to(torch::kUInt8);
  auto hwc = u8.permute({1, 2, 0}).contiguous();
  const auto* p = hwc.data_ptr<std::uint8_t>();
  return std::vector<std::uint8_t>(p, p + hwc.numel());
}

Image Image::from_u8_rgb(const std::uint8_t* data, std::int64_t h, std::int64_t w,
                         std::string source_id) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(data), {h, w, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32)
               .div(255.0f);
  return Image(t, std::move(source_id));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image load_png_file(std::FILE* fp, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng info init failed");
  }
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG decode failed: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);

  // Normalize everything to 8-bit RGB.
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_strip_alpha(png);
  png_read_update_info(png, info);

  pixels.resize(static_cast<std::size_t>(h) * w * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  return Image::from_u8_rgb(pixels.data(), h, w, path);
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image load_jpeg_file(std::FILE* fp, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("JPEG decode failed: " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  const std::int64_t w = cinfo.output_width;
  const std::int64_t h = cinfo.output_height;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(h) * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    std::uint8_t* row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);

  return Image::from_u8_rgb(pixels.data(), h, w, path);
}

}  // namespace

Image load_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);

  std::uint8_t magic[4] = {};
  if (std::fread(magic, 1, 4, fp.get()) != 4) throw IoError("file too short: " + path);
  std::rewind(fp.get());

  if (magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G')
    return load_png_file(fp.get(), path);
  if (magic[0] == 0xFF && magic[1] == 0xD8)
    return load_jpeg_file(fp.get(), path);
  throw IoError("unsupported image format (not PNG/JPEG): " + path);
}

void save_png(const Image& img, const std::string& path) {
  if (!img.defined()) throw InputError("save_png: empty image");
  auto pixels = img.to_u8_rgb();
  const std::int64_t h = img.height();
  const std::int64_t w = img.width();

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot create: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed: " + path);
  }
  png_init_io(png, fp.get());
  // Fixed settings keep the byte stream a pure function of the pixels.
  png_set_compression_level(png, 6);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (std::int64_t y = 0; y < h; ++y)
    rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

bool images_equal(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) return false;
  return a.tensor().equal(b.tensor());
}

}  // namespace udm
