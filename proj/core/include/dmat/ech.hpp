#pragma once

#include "dmat/pconv.hpp"

namespace dmat {

struct EchConfig {
  std::vector<int> kernels{7, 7, 7};
  std::vector<int64_t> channels{64, 128, 256};
  int64_t in_channels = 5;
  bool enabled = true;

  // disabling the enlarged-kernel head falls back to a plain 3x3 embedding
  std::vector<int> effective_kernels() const {
    return enabled ? kernels : std::vector<int>(kernels.size(), 3);
  }
  void validate() const {
    if (kernels.size() != 3 || channels.size() != 3)
      throw ValueError("ech: exactly three blocks expected, got " +
                       std::to_string(kernels.size()) + " kernels / " +
                       std::to_string(channels.size()) + " channel widths");
    for (int k : kernels)
      if (k < 1) throw ValueError("ech: kernel sizes must be >= 1");
    for (int64_t c : channels)
      if (c < 1) throw ValueError("ech: channel widths must be >= 1");
  }
};

// One downsampling block: stride-2 masked conv, then a stride-1 masked-conv
// residual sub-block with the same kernel size. Even kernels keep spatial
// size on the residual path by padding k/2 and cropping the extra row/col.
template <typename T>
struct EchBlock {
  PConvLayer<T> down, res;
  InstanceNorm2d<T> norm1, norm2;
  int k = 3;

  EchBlock() = default;
  EchBlock(Rng& rng, int64_t in_ch, int64_t out_ch, int k_)
      : down(rng, in_ch, out_ch, k_, 2, k_ % 2 ? (k_ - 1) / 2 : k_ / 2 - 1),
        res(rng, out_ch, out_ch, k_, 1, k_ % 2 ? (k_ - 1) / 2 : k_ / 2),
        norm1(out_ch),
        norm2(out_ch),
        k(k_) {}

  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& x,
                                          const Tensor<T>& m) const {
    auto d = down.forward(x, m);
    Tensor<T> a = silu(norm1.forward(d.y));
    auto r = res.forward(a, d.mask);
    Tensor<T> ry = r.y;
    Tensor<T> rm = r.mask;
    if (k % 2 == 0) {
      int64_t H2 = a.dim(2), W2 = a.dim(3);
      ry = slice(slice(ry, 2, 0, H2), 3, 0, W2);
      rm = slice(slice(rm, 2, 0, H2), 3, 0, W2);
    }
    Tensor<T> out = silu(add(a, norm2.forward(ry)));
    return {out, rm};
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    down.register_params(r, p + ".down");
    res.register_params(r, p + ".res");
    norm1.register_params(r, p + ".norm1");
    norm2.register_params(r, p + ".norm2");
  }
};

// Token embedding head: three stride-2 masked-conv blocks, 8x downsample.
// Consumes the 5-channel stack (image masked to visible pixels, visibility
// plane, amodal plane) plus the visibility plane as the conv validity mask.
template <typename T>
struct EchHead {
  EchConfig cfg;
  std::vector<EchBlock<T>> blocks;

  EchHead() = default;
  EchHead(Rng& rng, EchConfig cfg_) : cfg(std::move(cfg_)) {
    cfg.validate();
    auto ks = cfg.effective_kernels();
    int64_t in_ch = cfg.in_channels;
    for (size_t i = 0; i < ks.size(); ++i) {
      blocks.emplace_back(rng, in_ch, cfg.channels[i], ks[i]);
      in_ch = cfg.channels[i];
    }
  }

  static Tensor<T> stack_input(const Tensor<T>& img, const Tensor<T>& vis,
                               const Tensor<T>& amodal) {
    return concat({mul(img, vis), vis, amodal}, 1);
  }

  // x5 [N,5,H,W], m [N,1,H,W]; H and W must be multiples of 8
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& x5,
                                          const Tensor<T>& m) const {
    if (x5.dim(1) != cfg.in_channels)
      throw ShapeError("ech: expected " + std::to_string(cfg.in_channels) +
                       " input channels, got " + std::to_string(x5.dim(1)));
    if (x5.dim(2) % 8 || x5.dim(3) % 8)
      throw ValueError("ech: input resolution " + std::to_string(x5.dim(2)) +
                       "x" + std::to_string(x5.dim(3)) +
                       " must be a multiple of 8 (three stride-2 blocks)");
    Tensor<T> y = x5, mm = m;
    for (auto& b : blocks) std::tie(y, mm) = b.forward(y, mm);
    return {y, mm};
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].register_params(r, p + ".block" + std::to_string(i));
  }
};

}  // namespace dmat
