#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmat/mask.hpp"
#include "dmat/tensor.hpp"

namespace dmat {

// 8-bit interleaved pixel buffer, the PNG interchange type (1 or 3 channels)
struct ImageU8 {
  int64_t h = 0, w = 0, channels = 0;
  std::vector<uint8_t> pix;

  ImageU8() = default;
  ImageU8(int64_t h_, int64_t w_, int64_t ch)
      : h(h_), w(w_), channels(ch), pix(size_t(h_ * w_ * ch), 0) {}

  uint8_t at(int64_t y, int64_t x, int64_t c) const {
    return pix[size_t((y * w + x) * channels + c)];
  }
  uint8_t& at(int64_t y, int64_t x, int64_t c) {
    return pix[size_t((y * w + x) * channels + c)];
  }
};

// gray PNGs load as 1 channel, color as 3 (alpha stripped against black)
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// [-1,1] <-> 0..255 quantization; round trip from u8 is exact
inline uint8_t quantize_unit(double v) {
  double u = (v + 1.0) * 127.5;
  if (u <= 0.0) return 0;
  if (u >= 255.0) return 255;
  return uint8_t(u + 0.5);
}
inline double dequantize_unit(uint8_t u) { return double(u) / 127.5 - 1.0; }

// CHW [C,H,W] in [-1,1]; C must be 1 or 3
template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img) {
  Tensor<T> t({img.channels, img.h, img.w});
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        t.at({c, y, x}) = T(dequantize_unit(img.at(y, x, c)));
  return t;
}

template <typename T>
ImageU8 tensor_to_image(const Tensor<T>& t) {
  if (t.ndim() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    throw ShapeError("tensor_to_image: expected [1|3,H,W], got " +
                     shape_str(t.shape()));
  ImageU8 img(t.dim(1), t.dim(2), t.dim(0));
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        img.at(y, x, c) = quantize_unit(double(t.at({c, y, x})));
  return img;
}

// masks serialize as 8-bit gray, 0 or 255; >= 128 reads back as 1
Mask image_to_mask(const ImageU8& img);
ImageU8 mask_to_image(const Mask& m);

inline Mask read_mask_png(const std::string& path) {
  return image_to_mask(read_png(path));
}
inline void write_mask_png(const std::string& path, const Mask& m) {
  write_png(path, mask_to_image(m));
}

}  // namespace dmat
