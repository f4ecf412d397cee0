#include "consim/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "consim/error.hpp"

namespace consim {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::string& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path);
  return f;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

}  // namespace

Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(ErrorCode::kMalformedFile, "png: cannot read " + path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::kMalformedFile, "png: cannot decode " + path + ": " + img.message);
  }
  return out;
}

void write_png(const std::string& path, const Image& image) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIo, "png: cannot write " + path + ": " + img.message);
  }
}

Image read_jpeg(const std::string& path) {
  File file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = &jpeg_error_exit;
  Image out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::kMalformedFile, "jpeg: cannot decode " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = Image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.at(0, static_cast<int>(cinfo.output_scanline));
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

Image read_image(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  throw Error(ErrorCode::kUnsupportedFormat, "unsupported image type: " + path);
}

Image crop(const Image& image, const Rect& rect) {
  if (rect.x < 0 || rect.y < 0 || rect.x + rect.w > image.width || rect.y + rect.h > image.height) {
    throw Error(ErrorCode::kInvalidArgument, "crop: rect outside image");
  }
  Image out(rect.w, rect.h);
  for (int y = 0; y < rect.h; ++y) {
    std::copy_n(image.at(rect.x, rect.y + y), static_cast<std::size_t>(rect.w) * 3, out.at(0, y));
  }
  return out;
}

Image resize_nearest(const Image& image, int width, int height) {
  if (image.width == width && image.height == height) return image;
  Image out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(image.height - 1, static_cast<int>(static_cast<long long>(y) * image.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(image.width - 1, static_cast<int>(static_cast<long long>(x) * image.width / width));
      std::copy_n(image.at(sx, sy), 3, out.at(x, y));
    }
  }
  return out;
}

Image montage(const std::vector<Image>& tiles, int grid, int tile_size) {
  Image out(grid * tile_size, grid * tile_size);
  for (std::size_t t = 0; t < tiles.size() && t < static_cast<std::size_t>(grid * grid); ++t) {
    const Image tile = resize_nearest(tiles[t], tile_size, tile_size);
    const int ox = static_cast<int>(t % static_cast<std::size_t>(grid)) * tile_size;
    const int oy = static_cast<int>(t / static_cast<std::size_t>(grid)) * tile_size;
    for (int y = 0; y < tile_size; ++y) {
      std::copy_n(tile.at(0, y), static_cast<std::size_t>(tile_size) * 3, out.at(ox, oy + y));
    }
  }
  return out;
}

}  // namespace consim
