#include "dmat/image_io.hpp"

#include <png.h>

#include <cstring>

namespace dmat {

ImageU8 read_png(const std::string& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str()))
    throw IoError("read_png: " + path + ": " + pi.message);

  bool gray = (pi.format & PNG_FORMAT_FLAG_COLOR) == 0;
  pi.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  ImageU8 img(pi.height, pi.width, gray ? 1 : 3);
  if (!png_image_finish_read(&pi, nullptr, img.pix.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw IoError("read_png: " + path + ": " + pi.message);
  }
  return img;
}

void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ValueError("write_png: 1 or 3 channels required, got " +
                     std::to_string(img.channels));
  if (img.h < 1 || img.w < 1 ||
      img.pix.size() != size_t(img.h * img.w * img.channels))
    throw ValueError("write_png: inconsistent buffer for " + path);
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = png_uint_32(img.w);
  pi.height = png_uint_32(img.h);
  pi.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, img.pix.data(), 0,
                               nullptr))
    throw IoError("write_png: " + path + ": " + pi.message);
}

Mask image_to_mask(const ImageU8& img) {
  if (img.channels != 1)
    throw ValueError("image_to_mask: expected a gray image, got " +
                     std::to_string(img.channels) + " channels");
  Mask m(img.h, img.w);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      m.at(y, x) = img.at(y, x, 0) >= 128 ? 1 : 0;
  return m;
}

ImageU8 mask_to_image(const Mask& m) {
  validate_binary(m, "mask_to_image");
  ImageU8 img(m.h, m.w, 1);
  for (int64_t y = 0; y < m.h; ++y)
    for (int64_t x = 0; x < m.w; ++x) img.at(y, x, 0) = m.at(y, x) ? 255 : 0;
  return img;
}

}  // namespace dmat
