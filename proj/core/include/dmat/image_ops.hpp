#pragma once

#include "dmat/ops.hpp"

namespace dmat {
namespace detail {

// col is [C*k*k, P] with P = H2*W2; out-of-bounds taps contribute 0
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t k, int64_t s,
            int64_t p, int64_t H2, int64_t W2, T* col) {
  int64_t P = H2 * W2;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * P;
        for (int64_t oy = 0; oy < H2; ++oy) {
          int64_t iy = oy * s + ky - p;
          if (iy < 0 || iy >= H) {
            for (int64_t ox = 0; ox < W2; ++ox) row[oy * W2 + ox] = T(0);
            continue;
          }
          const T* src = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < W2; ++ox) {
            int64_t ix = ox * s + kx - p;
            row[oy * W2 + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t k,
                int64_t s, int64_t p, int64_t H2, int64_t W2, T* x) {
  int64_t P = H2 * W2;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * P;
        for (int64_t oy = 0; oy < H2; ++oy) {
          int64_t iy = oy * s + ky - p;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < W2; ++ox) {
            int64_t ix = ox * s + kx - p;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * W2 + ox];
          }
        }
      }
}

}  // namespace detail

// x [N,C,H,W], w [O,C,k,k], bias [O] or default-constructed for none.
// Output spatial size floor((H + 2*pad - k)/stride) + 1. The bias is added in
// a separate pass after the matrix product (never folded into the gemm), so
// masked-convolution wrappers can reproduce the identical accumulation order.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError("conv2d: expected x [N,C,H,W] and w [O,C,k,k], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C)
    throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) +
                     " input channels, x has " + std::to_string(C));
  if (w.dim(3) != k) throw ShapeError("conv2d: non-square kernel unsupported");
  if (stride < 1 || pad < 0 || k < 1)
    throw ValueError("conv2d: stride >= 1, pad >= 0, k >= 1 required");
  if (H + 2 * pad < k || W + 2 * pad < k)
    throw ShapeError("conv2d: kernel " + std::to_string(k) +
                     " exceeds padded input " + shape_str(x.shape()));
  int64_t H2 = (H + 2 * pad - k) / stride + 1;
  int64_t W2 = (W + 2 * pad - k) / stride + 1;
  int64_t P = H2 * W2, CKK = C * k * k;
  bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != O))
    throw ShapeError("conv2d: bias must be [O]");
  Tensor<T> y({N, O, H2, W2});
  {
    std::vector<T> col(size_t(CKK * P));
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    T* yp = y.ptr();
    for (int64_t n = 0; n < N; ++n) {
      detail::im2col(xp + n * C * H * W, C, H, W, k, stride, pad, H2, W2,
                     col.data());
      detail::gemm(false, false, O, P, CKK, T(1), wp, CKK, col.data(), P, T(0),
                   yp + n * O * P, P);
      if (has_bias) {
        const T* bp = bias.ptr();
        for (int64_t o = 0; o < O; ++o) {
          T bv = bp[o];
          T* dst = yp + (n * O + o) * P;
          for (int64_t q = 0; q < P; ++q) dst[q] += bv;
        }
      }
    }
  }
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = has_bias ? bias.impl() : nullptr;
  auto yi = y.impl();
  bool wx = xi->wants_grad(), ww = wi->wants_grad();
  bool wb = has_bias && bi->wants_grad();
  int64_t s = stride, pd = pad;
  tape_record<T>("conv2d", wx || ww || wb, y,
                 [xi, wi, bi, yi, N, C, H, W, O, k, s, pd, H2, W2, wx, ww, wb] {
    yi->ensure_grad();
    if (wx) xi->ensure_grad();
    if (ww) wi->ensure_grad();
    if (wb) bi->ensure_grad();
    int64_t P = H2 * W2, CKK = C * k * k;
    std::vector<T> col;
    if (ww) col.resize(size_t(CKK * P));
    std::vector<T> dcol;
    if (wx) dcol.resize(size_t(CKK * P));
    // fixed sample order keeps weight-gradient accumulation deterministic
    for (int64_t n = 0; n < N; ++n) {
      const T* g = yi->grad.data() + n * O * P;
      if (wb)
        for (int64_t o = 0; o < O; ++o) {
          T acc = T(0);
          for (int64_t q = 0; q < P; ++q) acc += g[o * P + q];
          bi->grad[size_t(o)] += acc;
        }
      if (ww) {
        detail::im2col(xi->data.data() + n * C * H * W, C, H, W, k, s, pd, H2,
                       W2, col.data());
        detail::gemm(false, true, O, CKK, P, T(1), g, P, col.data(), P, T(1),
                     wi->grad.data(), CKK);
      }
      if (wx) {
        detail::gemm(true, false, CKK, P, O, T(1), wi->data.data(), CKK, g, P,
                     T(0), dcol.data(), P);
        detail::col2im_add(dcol.data(), C, H, W, k, s, pd, H2, W2,
                           xi->grad.data() + n * C * H * W);
      }
    }
  });
  return y;
}

// integer-factor bilinear upsample, half-pixel centers (align_corners=false)
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor) {
  if (x.ndim() != 4)
    throw ShapeError("bilinear_upsample: expected [N,C,H,W], got " +
                     shape_str(x.shape()));
  if (factor < 1) throw ValueError("bilinear_upsample: factor >= 1 required");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t H2 = H * factor, W2 = W * factor;
  std::vector<int64_t> y0(size_t(H2), 0), y1(size_t(H2), 0),
      x0(size_t(W2), 0), x1(size_t(W2), 0);
  std::vector<T> ty(size_t(H2), T(0)), tx(size_t(W2), T(0));
  auto build = [factor](int64_t n_out, int64_t n_in, std::vector<int64_t>& i0,
                        std::vector<int64_t>& i1, std::vector<T>& t) {
    for (int64_t o = 0; o < n_out; ++o) {
      T src = (T(o) + T(0.5)) / T(factor) - T(0.5);
      if (src < T(0)) src = T(0);
      if (src > T(n_in - 1)) src = T(n_in - 1);
      int64_t f = int64_t(std::floor(src));
      i0[size_t(o)] = f;
      i1[size_t(o)] = std::min(f + 1, n_in - 1);
      t[size_t(o)] = src - T(f);
    }
  };
  build(H2, H, y0, y1, ty);
  build(W2, W, x0, x1, tx);
  Tensor<T> y({N, C, H2, W2});
  auto xs = x.values();
  auto ys = y.values();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* in = xs.data() + nc * H * W;
    T* out = ys.data() + nc * H2 * W2;
    for (int64_t oy = 0; oy < H2; ++oy) {
      const T* r0 = in + y0[size_t(oy)] * W;
      const T* r1 = in + y1[size_t(oy)] * W;
      T wy = ty[size_t(oy)];
      for (int64_t ox = 0; ox < W2; ++ox) {
        T wx = tx[size_t(ox)];
        out[oy * W2 + ox] =
            (T(1) - wy) * ((T(1) - wx) * r0[x0[size_t(ox)]] +
                           wx * r0[x1[size_t(ox)]]) +
            wy * ((T(1) - wx) * r1[x0[size_t(ox)]] + wx * r1[x1[size_t(ox)]]);
      }
    }
  }
  auto xi = x.impl();
  auto yi = y.impl();
  tape_record<T>("bilinear_upsample", xi->wants_grad(), y,
                 [xi, yi, N, C, H, W, H2, W2, y0, y1, x0, x1, ty, tx] {
    yi->ensure_grad();
    xi->ensure_grad();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      T* gx = xi->grad.data() + nc * H * W;
      const T* gy = yi->grad.data() + nc * H2 * W2;
      for (int64_t oy = 0; oy < H2; ++oy) {
        T wy = ty[size_t(oy)];
        for (int64_t ox = 0; ox < W2; ++ox) {
          T wx = tx[size_t(ox)];
          T g = gy[oy * W2 + ox];
          gx[y0[size_t(oy)] * W + x0[size_t(ox)]] += (T(1) - wy) * (T(1) - wx) * g;
          gx[y0[size_t(oy)] * W + x1[size_t(ox)]] += (T(1) - wy) * wx * g;
          gx[y1[size_t(oy)] * W + x0[size_t(ox)]] += wy * (T(1) - wx) * g;
          gx[y1[size_t(oy)] * W + x1[size_t(ox)]] += wy * wx * g;
        }
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride) {
  if (x.ndim() != 4)
    throw ShapeError("maxpool2d: expected [N,C,H,W], got " +
                     shape_str(x.shape()));
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (k < 1 || stride < 1 || k > H || k > W)
    throw ValueError("maxpool2d: invalid kernel/stride for " +
                     shape_str(x.shape()));
  int64_t H2 = (H - k) / stride + 1, W2 = (W - k) / stride + 1;
  Tensor<T> y({N, C, H2, W2});
  auto idx = std::make_shared<std::vector<int64_t>>(size_t(N * C * H2 * W2));
  auto xs = x.values();
  auto ys = y.values();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* in = xs.data() + nc * H * W;
    for (int64_t oy = 0; oy < H2; ++oy)
      for (int64_t ox = 0; ox < W2; ++ox) {
        int64_t best = (oy * stride) * W + ox * stride;
        T bv = in[best];
        for (int64_t ky = 0; ky < k; ++ky)
          for (int64_t kx = 0; kx < k; ++kx) {
            int64_t p = (oy * stride + ky) * W + ox * stride + kx;
            if (in[p] > bv) {
              bv = in[p];
              best = p;
            }
          }
        ys[size_t(nc * H2 * W2 + oy * W2 + ox)] = bv;
        (*idx)[size_t(nc * H2 * W2 + oy * W2 + ox)] = best;
      }
  }
  auto xi = x.impl();
  auto yi = y.impl();
  tape_record<T>("maxpool2d", xi->wants_grad(), y, [xi, yi, idx, N, C, H, W,
                                                    H2, W2] {
    yi->ensure_grad();
    xi->ensure_grad();
    for (int64_t nc = 0; nc < N * C; ++nc)
      for (int64_t q = 0; q < H2 * W2; ++q)
        xi->grad[size_t(nc * H * W + (*idx)[size_t(nc * H2 * W2 + q)])] +=
            yi->grad[size_t(nc * H2 * W2 + q)];
  });
  return y;
}

// source pixel for window token (wy, wx, ly, lx) under a cyclic pre-shift
inline std::pair<int64_t, int64_t> window_src(int64_t wy, int64_t wx,
                                              int64_t ly, int64_t lx,
                                              int64_t wsz, int64_t shift,
                                              int64_t H, int64_t W) {
  return {(wy * wsz + ly + shift) % H, (wx * wsz + lx + shift) % W};
}

// x [N,H,W,C] -> [N*nWin, wsz*wsz, C]; shift rolls content up-left first
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int wsz, int shift) {
  if (x.ndim() != 4)
    throw ShapeError("window_partition: expected [N,H,W,C], got " +
                     shape_str(x.shape()));
  int64_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (wsz < 1 || H % wsz != 0 || W % wsz != 0)
    throw ShapeError("window_partition: window " + std::to_string(wsz) +
                     " does not tile grid " + std::to_string(H) + "x" +
                     std::to_string(W));
  int64_t nH = H / wsz, nW = W / wsz;
  Tensor<T> y({N * nH * nW, int64_t(wsz) * wsz, C});
  auto xs = x.values();
  auto ys = y.values();
  int64_t t = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t wy = 0; wy < nH; ++wy)
      for (int64_t wx = 0; wx < nW; ++wx)
        for (int64_t ly = 0; ly < wsz; ++ly)
          for (int64_t lx = 0; lx < wsz; ++lx, ++t) {
            auto [sy, sx] = window_src(wy, wx, ly, lx, wsz, shift, H, W);
            const T* src = xs.data() + ((n * H + sy) * W + sx) * C;
            std::copy(src, src + C, ys.data() + t * C);
          }
  auto xi = x.impl();
  auto yi = y.impl();
  int64_t ws = wsz, sh = shift;
  tape_record<T>("window_partition", xi->wants_grad(), y,
                 [xi, yi, N, H, W, C, nH, nW, ws, sh] {
    yi->ensure_grad();
    xi->ensure_grad();
    int64_t t = 0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t wy = 0; wy < nH; ++wy)
        for (int64_t wx = 0; wx < nW; ++wx)
          for (int64_t ly = 0; ly < ws; ++ly)
            for (int64_t lx = 0; lx < ws; ++lx, ++t) {
              auto [sy, sx] = window_src(wy, wx, ly, lx, ws, sh, H, W);
              T* dst = xi->grad.data() + ((n * H + sy) * W + sx) * C;
              const T* g = yi->grad.data() + t * C;
              for (int64_t c = 0; c < C; ++c) dst[c] += g[c];
            }
  });
  return y;
}

// inverse of window_partition for the same (wsz, shift, N, H, W)
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& win, int wsz, int shift, int64_t N,
                         int64_t H, int64_t W) {
  if (win.ndim() != 3)
    throw ShapeError("window_reverse: expected [nWin, wsz*wsz, C], got " +
                     shape_str(win.shape()));
  int64_t nH = H / wsz, nW = W / wsz;
  int64_t C = win.dim(2);
  if (win.dim(0) != N * nH * nW || win.dim(1) != int64_t(wsz) * wsz)
    throw ShapeError("window_reverse: window tensor " +
                     shape_str(win.shape()) + " does not match grid " +
                     std::to_string(H) + "x" + std::to_string(W) +
                     " with window " + std::to_string(wsz));
  Tensor<T> y({N, H, W, C});
  auto ws_ = win.values();
  auto ys = y.values();
  int64_t t = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t wy = 0; wy < nH; ++wy)
      for (int64_t wx = 0; wx < nW; ++wx)
        for (int64_t ly = 0; ly < wsz; ++ly)
          for (int64_t lx = 0; lx < wsz; ++lx, ++t) {
            auto [sy, sx] = window_src(wy, wx, ly, lx, wsz, shift, H, W);
            const T* src = ws_.data() + t * C;
            std::copy(src, src + C, ys.data() + ((n * H + sy) * W + sx) * C);
          }
  auto wi = win.impl();
  auto yi = y.impl();
  int64_t wz = wsz, sh = shift;
  tape_record<T>("window_reverse", wi->wants_grad(), y,
                 [wi, yi, N, H, W, C, nH, nW, wz, sh] {
    yi->ensure_grad();
    wi->ensure_grad();
    int64_t t = 0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t wy = 0; wy < nH; ++wy)
        for (int64_t wx = 0; wx < nW; ++wx)
          for (int64_t ly = 0; ly < wz; ++ly)
            for (int64_t lx = 0; lx < wz; ++lx, ++t) {
              auto [sy, sx] = window_src(wy, wx, ly, lx, wz, sh, H, W);
              const T* g = yi->grad.data() + ((n * H + sy) * W + sx) * C;
              T* dst = wi->grad.data() + t * C;
              for (int64_t c = 0; c < C; ++c) dst[c] += g[c];
            }
  });
  return y;
}

}  // namespace dmat
