#pragma once

#include "dmat/attention.hpp"

namespace dmat {

// Region-separated 2x upsampling: content inside and outside the region is
// upsampled independently and re-gated by the upsampled region planes, so
// neither side bleeds across the boundary. m is a grad-free {0,1} plane
// [N,1,h,w] at the input resolution.
template <typename T>
Tensor<T> region_upsample(const Tensor<T>& x, const Tensor<T>& m) {
  if (m.ndim() != 4 || m.dim(1) != 1 || m.dim(2) != x.dim(2) ||
      m.dim(3) != x.dim(3))
    throw ShapeError("region_upsample: plane " + shape_str(m.shape()) +
                     " does not match input " + shape_str(x.shape()));
  Tensor<T> mi = mul_scalar(add_scalar(m, T(-1)), T(-1));  // 1 - m
  Tensor<T> um = bilinear_upsample(m, 2);
  Tensor<T> umi = bilinear_upsample(mi, 2);
  Tensor<T> pos = mul(bilinear_upsample(mul(x, m), 2), um);
  Tensor<T> neg = mul(bilinear_upsample(mul(x, mi), 2), umi);
  return add(pos, neg);
}

struct DecoderConfig {
  int64_t in_channels = 128;
  std::vector<int64_t> channels{256, 128, 6};  // last stage emits 3 rgb + 3 aux
  bool ru_enabled = true;  // off: plain bilinear upsampling, region plane unused

  void validate() const {
    if (channels.size() != 3)
      throw ValueError("decoder: exactly three stages expected");
    if (channels.back() < 3)
      throw ValueError("decoder: final stage needs at least 3 channels");
    for (int64_t c : channels)
      if (c < 1) throw ValueError("decoder: channel widths must be >= 1");
  }
};

template <typename T>
struct DecoderOut {
  Tensor<T> rgb;  // [N,3,8h,8w], tanh range
  Tensor<T> raw;  // [N,channels[2],8h,8w], pre-activation
};

// Three stages of region upsample -> 3x3 conv; the first two stages carry
// instance norm + silu, the last is a bare projection whose first three
// channels pass through tanh as the image estimate.
template <typename T>
struct Decoder {
  DecoderConfig cfg;
  std::vector<Conv2dLayer<T>> convs;
  std::vector<InstanceNorm2d<T>> norms;  // stages 0 and 1 only

  Decoder() = default;
  Decoder(Rng& rng, DecoderConfig cfg_) : cfg(std::move(cfg_)) {
    cfg.validate();
    int64_t in = cfg.in_channels;
    for (size_t i = 0; i < 3; ++i) {
      // the last stage projects to the output image: linear gain, no rectifier
      convs.emplace_back(rng, in, cfg.channels[i], 3, 1, 1, true,
                         i == 2 ? 1.0 : 2.0);
      if (i < 2) norms.emplace_back(cfg.channels[i]);
      in = cfg.channels[i];
    }
    // zero-init output projection: the first prediction is the zero image
    for (auto& v : convs[2].w.values()) v = T(0);
  }

  // x [N,in,h,w]; amodal_full [N,1,8h,8w] grad-free human-extent plane at the
  // output resolution, majority-reduced to each stage's input resolution
  DecoderOut<T> forward(const Tensor<T>& x, const Tensor<T>& amodal_full) const {
    if (x.dim(1) != cfg.in_channels)
      throw ShapeError("decoder: expected " + std::to_string(cfg.in_channels) +
                       " input channels, got " + std::to_string(x.dim(1)));
    if (amodal_full.dim(2) != x.dim(2) * 8 || amodal_full.dim(3) != x.dim(3) * 8)
      throw ShapeError("decoder: region plane " + shape_str(amodal_full.shape()) +
                       " is not 8x the grid " + shape_str(x.shape()));
    auto plane_at = [&](int factor) {
      if (factor == 1) return amodal_full;
      Tensor<T> nhwc = permute(amodal_full, {0, 2, 3, 1});
      return permute(plane_majority_down(nhwc, factor), {0, 3, 1, 2});
    };
    Tensor<T> t = x;
    int reduce[3] = {8, 4, 2};
    for (size_t i = 0; i < 3; ++i) {
      t = cfg.ru_enabled ? region_upsample(t, plane_at(reduce[i]))
                         : bilinear_upsample(t, 2);
      t = convs[i].forward(t);
      if (i < 2) t = silu(norms[i].forward(t));
    }
    Tensor<T> rgb = tanh(slice(t, 1, 0, 3));
    return {rgb, t};
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    for (size_t i = 0; i < convs.size(); ++i) {
      convs[i].register_params(r, p + ".stage" + std::to_string(i) + ".conv");
      if (i < norms.size())
        norms[i].register_params(r, p + ".stage" + std::to_string(i) + ".norm");
    }
  }
};

}  // namespace dmat
