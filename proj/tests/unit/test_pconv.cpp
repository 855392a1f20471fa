#include <doctest.h>

#include <cmath>

#include "dmat/finite_diff.hpp"
#include "dmat/pconv.hpp"
#include "dmat/rng.hpp"

using namespace dmat;

namespace {

template <typename T>
Tensor<T> rnd(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = T(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> random_mask_plane(Rng& rng, int64_t n, int64_t h, int64_t w,
                            double p) {
  Tensor<T> t({n, 1, h, w});
  for (auto& v : t.values()) v = rng.bernoulli(p) ? T(1) : T(0);
  return t;
}

// independent nested-loop reference for the masked convolution, including
// renormalization, bias placement, and the validity update
template <typename T>
void pconv_reference(const Tensor<T>& x, const Tensor<T>& m,
                     const Tensor<T>& w, const Tensor<T>& b, int s, int p,
                     std::vector<double>& out, std::vector<double>& mout) {
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t O = w.dim(0), k = w.dim(2);
  int64_t H2 = (H + 2 * p - k) / s + 1, W2 = (W + 2 * p - k) / s + 1;
  out.assign(size_t(N * O * H2 * W2), 0.0);
  mout.assign(size_t(N * H2 * W2), 0.0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oy = 0; oy < H2; ++oy)
      for (int64_t ox = 0; ox < W2; ++ox) {
        int64_t valid = 0, inb = 0;
        for (int64_t ky = 0; ky < k; ++ky)
          for (int64_t kx = 0; kx < k; ++kx) {
            int64_t iy = oy * s + ky - p, ix = ox * s + kx - p;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
            ++inb;
            if (m.at({n, 0, iy, ix}) != T(0)) ++valid;
          }
        double denom = double(valid) + double(k * k - inb);
        double r = (denom > 0 && valid > 0) ? double(k * k) / denom : 0.0;
        double gate = valid > 0 ? 1.0 : 0.0;
        mout[size_t((n * H2 + oy) * W2 + ox)] = gate;
        for (int64_t o = 0; o < O; ++o) {
          double acc = 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                int64_t iy = oy * s + ky - p, ix = ox * s + kx - p;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                if (m.at({n, 0, iy, ix}) == T(0)) continue;
                acc += double(x.at({n, c, iy, ix})) *
                       double(w.at({o, c, ky, kx}));
              }
          double y = acc * r + (b.defined() ? double(b.values()[size_t(o)]) : 0.0);
          out[size_t(((n * O + o) * H2 + oy) * W2 + ox)] = y * gate;
        }
      }
}

}  // namespace

TEST_CASE("partial_conv matches the nested-loop reference on 200 random cases") {
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    int64_t N = 1 + int64_t(rng.uniform_int(2));
    int64_t C = 1 + int64_t(rng.uniform_int(3));
    int64_t O = 1 + int64_t(rng.uniform_int(3));
    int k = 1 + int(rng.uniform_int(5));              // 1..5
    int s = 1 + int(rng.uniform_int(2));              // 1..2
    int64_t H = k + int64_t(rng.uniform_int(6));      // k..k+5
    int64_t W = k + int64_t(rng.uniform_int(6));
    int p = int(rng.uniform_int(uint64_t(k)));        // 0..k-1
    double density = rng.uniform(0.1, 1.0);
    CAPTURE(trial);
    auto x = rnd<float>(rng, {N, C, H, W});
    auto m = random_mask_plane<float>(rng, N, H, W, density);
    auto w = rnd<float>(rng, {O, C, k, k});
    auto b = rnd<float>(rng, {O});
    auto got = partial_conv(x, m, w, b, s, p);
    std::vector<double> refy, refm;
    pconv_reference(x, m, w, b, s, p, refy, refm);
    REQUIRE(got.y.numel() == int64_t(refy.size()));
    double worst = 0;
    for (int64_t i = 0; i < got.y.numel(); ++i)
      worst = std::max(worst,
                       std::fabs(double(got.y.values()[size_t(i)]) - refy[size_t(i)]));
    CHECK(worst < 1e-5);
    for (int64_t i = 0; i < got.mask.numel(); ++i)
      CHECK(double(got.mask.values()[size_t(i)]) == refm[size_t(i)]);
  }
}

TEST_CASE("partial_conv degenerates to conv2d bitwise under an all-ones mask") {
  Rng rng(77);
  for (auto [k, s, p] : std::vector<std::tuple<int, int, int>>{
           {3, 1, 1}, {7, 2, 3}, {2, 2, 0}, {5, 1, 2}}) {
    CAPTURE(k);
    auto x = rnd<float>(rng, {2, 3, 8, 8});
    auto w = rnd<float>(rng, {4, 3, k, k});
    auto b = rnd<float>(rng, {4});
    auto ones = Tensor<float>::full({2, 1, 8, 8}, 1.0f);
    auto pc = partial_conv(x, ones, w, b, s, p);
    auto plain = conv2d(x, w, b, s, p);
    REQUIRE(pc.y.shape() == plain.shape());
    for (int64_t i = 0; i < plain.numel(); ++i)
      CHECK(pc.y.values()[size_t(i)] == plain.values()[size_t(i)]);
    for (auto v : pc.mask.values()) CHECK(v == 1.0f);
  }
}

TEST_CASE("partial_conv under an all-zeros mask is zero with zero mask") {
  Rng rng(78);
  auto x = rnd<float>(rng, {1, 2, 6, 6});
  auto w = rnd<float>(rng, {3, 2, 3, 3});
  auto b = rnd<float>(rng, {3});
  auto zeros = Tensor<float>({1, 1, 6, 6});
  auto pc = partial_conv(x, zeros, w, b, 1, 1);
  for (auto v : pc.y.values()) CHECK(v == 0.0f);
  for (auto v : pc.mask.values()) CHECK(v == 0.0f);
}

TEST_CASE("partial_conv output is invariant to values under the invalid mask") {
  Rng rng(79);
  auto x = rnd<float>(rng, {1, 2, 8, 8});
  auto m = random_mask_plane<float>(rng, 1, 8, 8, 0.5);
  auto w = rnd<float>(rng, {2, 2, 3, 3});
  auto b = rnd<float>(rng, {2});
  auto y1 = partial_conv(x, m, w, b, 1, 1);
  // slam invalid pixels with garbage
  auto x2 = x.clone();
  for (int64_t i = 0; i < 64; ++i)
    if (m.values()[size_t(i)] == 0.0f)
      for (int64_t c = 0; c < 2; ++c)
        x2.values()[size_t(c * 64 + i)] = float(rng.uniform(-100, 100));
  auto y2 = partial_conv(x2, m, w, b, 1, 1);
  for (int64_t i = 0; i < y1.y.numel(); ++i)
    CHECK(y1.y.values()[size_t(i)] == y2.y.values()[size_t(i)]);
}

TEST_CASE("partial_conv mask update oracle: 3x3 window spill") {
  // single valid pixel at (2,2) in 5x5; stride 1 pad 1 k3: outputs within
  // one step of (2,2) become valid
  auto x = Tensor<float>::full({1, 1, 5, 5}, 2.0f);
  auto m = Tensor<float>({1, 1, 5, 5});
  m.at({0, 0, 2, 2}) = 1.0f;
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto pc = partial_conv(x, m, w, Tensor<float>(), 1, 1);
  for (int64_t y = 0; y < 5; ++y)
    for (int64_t xx = 0; xx < 5; ++xx) {
      bool near = std::abs(y - 2) <= 1 && std::abs(xx - 2) <= 1;
      CHECK(pc.mask.at({0, 0, y, xx}) == (near ? 1.0f : 0.0f));
      // renormalized value: one valid tap of value 2, times 9/denominator;
      // interior windows have denom 1 (all taps in bounds, one valid)
      if (near && y >= 1 && y <= 3 && xx >= 1 && xx <= 3)
        CHECK(pc.y.at({0, 0, y, xx}) == doctest::Approx(2.0f * 9.0f));
    }
}

TEST_CASE("partial_conv gradients pass finite differences") {
  Rng rng(80);
  auto x = rnd<double>(rng, {1, 2, 6, 6});
  auto m = random_mask_plane<double>(rng, 1, 6, 6, 0.6);
  PConvLayer<double> layer(rng, 2, 3, 3, 1, 1);
  auto f = [&] { return sum(dmat::tanh(layer.forward(x, m).y)); };
  CHECK(finite_diff_check<double>(f, x, 1e-5) < 1e-6);
  CHECK(finite_diff_check<double>(f, layer.w, 1e-5) < 1e-6);
  CHECK(finite_diff_check<double>(f, layer.b, 1e-5) < 1e-6);
}

TEST_CASE("partial_conv gradient does not leak into invalid pixels") {
  Rng rng(81);
  auto x = rnd<double>(rng, {1, 1, 6, 6});
  auto m = random_mask_plane<double>(rng, 1, 6, 6, 0.5);
  PConvLayer<double> layer(rng, 1, 2, 3, 1, 1);
  x.set_requires_grad(true);
  TapeScope<double> scope;
  auto loss = sum(layer.forward(x, m).y);
  scope.backward(loss);
  for (int64_t i = 0; i < 36; ++i)
    if (m.values()[size_t(i)] == 0.0)
      CHECK(x.grad()[size_t(i)] == 0.0);
}
