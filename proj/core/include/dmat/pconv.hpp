#pragma once

#include "dmat/nn.hpp"

namespace dmat {

// Convolution restricted to valid pixels. The input is zeroed outside the
// validity mask, the raw sum is rescaled by k^2 / (number of valid taps), the
// bias is added after rescaling, and the result is gated by the updated mask.
//
// Border convention: taps outside the image count as VALID for the
// renormalizer (so an all-ones mask gives a rescale factor of exactly 1 and
// the op degenerates bitwise to conv2d), but they never make a window valid
// for the mask update. A window with zero valid in-bounds taps yields output
// 0 and updated mask 0.
template <typename T>
struct PconvResult {
  Tensor<T> y;     // [N,O,H2,W2]
  Tensor<T> mask;  // [N,1,H2,W2] updated validity, values {0,1}, grad-free
};

namespace detail {

// renorm r = k^2/denom (0 where the window has no valid tap at all) and the
// any-valid-in-bounds updated mask; plain buffers, never on the tape
template <typename T>
void pconv_mask_info(const Tensor<T>& m, int64_t k, int64_t s, int64_t p,
                     int64_t H2, int64_t W2, Tensor<T>& renorm,
                     Tensor<T>& updated) {
  int64_t N = m.dim(0), H = m.dim(2), W = m.dim(3);
  auto ms = m.values();
  auto rs = renorm.values();
  auto us = updated.values();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oy = 0; oy < H2; ++oy)
      for (int64_t ox = 0; ox < W2; ++ox) {
        int64_t valid = 0, inbounds = 0;
        for (int64_t ky = 0; ky < k; ++ky)
          for (int64_t kx = 0; kx < k; ++kx) {
            int64_t iy = oy * s + ky - p, ix = ox * s + kx - p;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
            ++inbounds;
            if (ms[size_t((n * H + iy) * W + ix)] != T(0)) ++valid;
          }
        int64_t denom = valid + (k * k - inbounds);
        size_t o = size_t((n * H2 + oy) * W2 + ox);
        rs[o] = denom > 0 ? T(k * k) / T(denom) : T(0);
        us[o] = valid > 0 ? T(1) : T(0);
      }
}

}  // namespace detail

// x [N,C,H,W]; m [N,1,H,W] validity in {0,1}; w [O,C,k,k]; b [O] or undefined
template <typename T>
PconvResult<T> partial_conv(const Tensor<T>& x, const Tensor<T>& m,
                            const Tensor<T>& w, const Tensor<T>& b, int stride,
                            int pad) {
  if (m.ndim() != 4 || m.dim(1) != 1 || m.dim(0) != x.dim(0) ||
      m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3))
    throw ShapeError("partial_conv: mask must be [N,1,H,W] matching x, got " +
                     shape_str(m.shape()) + " for x " + shape_str(x.shape()));
  int64_t k = w.dim(2);
  Tensor<T> xm = mul(x, m);
  Tensor<T> raw = conv2d(xm, w, Tensor<T>(), stride, pad);
  int64_t H2 = raw.dim(2), W2 = raw.dim(3);
  Tensor<T> renorm({x.dim(0), 1, H2, W2});
  Tensor<T> updated({x.dim(0), 1, H2, W2});
  detail::pconv_mask_info(m, k, stride, pad, H2, W2, renorm, updated);
  Tensor<T> scaled = mul(raw, renorm);
  if (b.defined()) scaled = add(scaled, reshape(b, {1, b.dim(0), 1, 1}));
  return {mul(scaled, updated), updated};
}

// same equalized-lr weight storage as Conv2dLayer: unit-normal weights scaled
// by gain/sqrt(fan_in) at use
template <typename T>
struct PConvLayer {
  Tensor<T> w, b;
  T wscale = T(1);
  int stride = 1, pad = 0;

  PConvLayer() = default;
  PConvLayer(Rng& rng, int64_t in_ch, int64_t out_ch, int k, int stride_,
             int pad_)
      : w({out_ch, in_ch, k, k}, true),
        b({out_ch}, true),
        wscale(T(std::sqrt(2.0 / double(in_ch * k * k)))),
        stride(stride_),
        pad(pad_) {
    init_normal(rng, w, 1.0);
  }

  PconvResult<T> forward(const Tensor<T>& x, const Tensor<T>& m) const {
    return partial_conv(x, m, mul_scalar(w, wscale), b, stride, pad);
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    r.add(p + ".w", w);
    r.add(p + ".b", b);
  }
};

}  // namespace dmat
