#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dmat/image_ops.hpp"
#include "dmat/ops.hpp"
#include "dmat/rng.hpp"

namespace dmat {

// named handles on parameter tensors; checkpointing and the optimizer walk
// this list, so registration order must be construction-deterministic
template <typename T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  void add(const std::string& name, const Tensor<T>& t) {
    items.emplace_back(name, t);
  }
  int64_t total_count() const {
    int64_t n = 0;
    for (auto& [_, t] : items) n += t.numel();
    return n;
  }
  void set_requires_grad(bool rg) {
    for (auto& [_, t] : items) const_cast<Tensor<T>&>(t).set_requires_grad(rg);
  }
  void zero_grad() {
    for (auto& [_, t] : items) const_cast<Tensor<T>&>(t).zero_grad();
  }
};

template <typename T>
inline void init_normal(Rng& rng, Tensor<T>& t, double stddev) {
  for (auto& v : t.values()) v = T(rng.normal(0.0, stddev));
}

// He initialization: normal with std sqrt(2 / fan_in)
template <typename T>
inline void init_he(Rng& rng, Tensor<T>& t, int64_t fan_in) {
  init_normal(rng, t, std::sqrt(2.0 / double(fan_in)));
}

// normal(0, stddev) resampled into the +-2 sigma band
template <typename T>
inline void init_trunc_normal(Rng& rng, Tensor<T>& t, double stddev) {
  for (auto& v : t.values()) {
    double d = rng.normal(0.0, stddev);
    while (std::abs(d) > 2.0 * stddev) d = rng.normal(0.0, stddev);
    v = T(d);
  }
}

// Weights are stored unit-normal and multiplied by gain/sqrt(fan_in) at use
// (equalized learning rate). Adam's per-coordinate step is uniform across
// parameters, so the runtime scaling keeps per-layer output drift proportional
// to the lr instead of to sqrt(fan_in); the hot first lr segment stays stable.
template <typename T>
struct Linear {
  Tensor<T> w, b;
  T wscale = T(1);
  bool has_bias = true;

  Linear() = default;
  Linear(Rng& rng, int64_t in, int64_t out, bool bias = true)
      : w({in, out}, true),
        wscale(T(std::sqrt(2.0 / double(in)))),
        has_bias(bias) {
    init_normal(rng, w, 1.0);
    if (bias) b = Tensor<T>({out}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = matmul(x, mul_scalar(w, wscale));
    return has_bias ? add(y, b) : y;
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    r.add(p + ".w", w);
    if (has_bias) r.add(p + ".b", b);
  }
};

template <typename T>
struct Conv2dLayer {
  Tensor<T> w, b;
  T wscale = T(1);
  int stride = 1, pad = 0;
  bool has_bias = true;

  Conv2dLayer() = default;
  // gain 2 suits rectified stacks (He); use 1 for linear-output projections
  Conv2dLayer(Rng& rng, int64_t in_ch, int64_t out_ch, int k, int stride_,
              int pad_, bool bias = true, double gain = 2.0)
      : w({out_ch, in_ch, k, k}, true),
        wscale(T(std::sqrt(gain / double(in_ch * k * k)))),
        stride(stride_),
        pad(pad_),
        has_bias(bias) {
    init_normal(rng, w, 1.0);
    if (bias) b = Tensor<T>({out_ch}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, mul_scalar(w, wscale), has_bias ? b : Tensor<T>(), stride,
                  pad);
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    r.add(p + ".w", w);
    if (has_bias) r.add(p + ".b", b);
  }
};

// per-sample per-channel normalization over spatial dims, affine-free (the
// following conv's weights and bias already carry per-channel scale and shift)
template <typename T>
struct InstanceNorm2d {
  T eps = T(1e-5);

  InstanceNorm2d() = default;
  explicit InstanceNorm2d(int64_t) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> mu = mean(x, {2, 3}, true);
    Tensor<T> xc = sub(x, mu);
    Tensor<T> var = mean(mul(xc, xc), {2, 3}, true);
    Tensor<T> inv = pow_scalar(add_scalar(var, eps), T(-0.5));
    return mul(xc, inv);
  }

  void register_params(ParamRegistry<T>&, const std::string&) const {}
};

// normalization over the trailing (channel) axis, affine
template <typename T>
struct LayerNormLast {
  Tensor<T> gamma, beta;
  T eps = T(1e-5);

  LayerNormLast() = default;
  explicit LayerNormLast(int64_t ch)
      : gamma(Tensor<T>::full({ch}, T(1))), beta({ch}, true) {
    gamma.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    int last = x.ndim() - 1;
    Tensor<T> mu = mean(x, {last}, true);
    Tensor<T> xc = sub(x, mu);
    Tensor<T> var = mean(mul(xc, xc), {last}, true);
    Tensor<T> inv = pow_scalar(add_scalar(var, eps), T(-0.5));
    return add(mul(mul(xc, inv), gamma), beta);
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    r.add(p + ".gamma", gamma);
    r.add(p + ".beta", beta);
  }
};

}  // namespace dmat
