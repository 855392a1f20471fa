#pragma once

#include "dmat/nn.hpp"

namespace dmat {

struct LossWeights {
  double l1 = 15.0;
  double adv = 0.06;
  double perc = 1.0;
  double style = 150.0;
  double disc = 0.6;
};

// ---- 70x70-style patch discriminator ----------------------------------------

struct DiscConfig {
  int64_t in_channels = 3;
  std::vector<int64_t> channels{64, 128, 256, 512};

  void validate() const {
    if (channels.size() != 4)
      throw ValueError("discriminator: exactly four stride-2 stages expected");
    for (int64_t c : channels)
      if (c < 1) throw ValueError("discriminator: channel widths must be >= 1");
  }
};

// four 4x4 stride-2 convs (instance norm on all but the first) and a final
// 4x4 stride-1 projection to a patch logit map; leaky relu slope 0.2
template <typename T>
struct PatchDiscriminator {
  DiscConfig cfg;
  std::vector<Conv2dLayer<T>> convs;
  std::vector<InstanceNorm2d<T>> norms;

  PatchDiscriminator() = default;
  PatchDiscriminator(Rng& rng, DiscConfig cfg_) : cfg(std::move(cfg_)) {
    cfg.validate();
    int64_t in = cfg.in_channels;
    for (size_t i = 0; i < 4; ++i) {
      convs.emplace_back(rng, in, cfg.channels[i], 4, 2, 1);
      if (i > 0) norms.emplace_back(cfg.channels[i]);
      in = cfg.channels[i];
    }
    convs.emplace_back(rng, in, 1, 4, 1, 1);
  }

  // x [N,in,H,W], H and W multiples of 16 and >= 32 -> [N,1,H/16-1,W/16-1]
  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> t = x;
    for (size_t i = 0; i < 4; ++i) {
      t = convs[i].forward(t);
      if (i > 0) t = norms[i - 1].forward(t);
      t = leaky_relu(t, T(0.2));
    }
    return convs[4].forward(t);
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    for (size_t i = 0; i < convs.size(); ++i)
      convs[i].register_params(r, p + ".conv" + std::to_string(i));
    for (size_t i = 0; i < norms.size(); ++i)
      norms[i].register_params(r, p + ".norm" + std::to_string(i + 1));
  }
};

// ---- frozen feature extractor ------------------------------------------------

// measurement network for the perceptual and style terms: stride-2 3x3 convs
// with tanh, weights drawn once from a pinned seed and never trained
template <typename T>
struct FeatureNet {
  std::vector<Conv2dLayer<T>> convs;

  explicit FeatureNet(uint64_t seed = 1234,
                      std::vector<int64_t> channels = {16, 32, 64, 128, 128},
                      int64_t in_channels = 3) {
    Rng rng(seed);
    int64_t in = in_channels;
    for (int64_t c : channels) {
      convs.emplace_back(rng, in, c, 3, 2, 1);
      in = c;
    }
    for (auto& cv : convs) {
      cv.w.set_requires_grad(false);
      cv.b.set_requires_grad(false);
    }
  }

  std::vector<Tensor<T>> forward(const Tensor<T>& x) const {
    std::vector<Tensor<T>> maps;
    Tensor<T> t = x;
    for (auto& cv : convs) {
      t = tanh(cv.forward(t));
      maps.push_back(t);
    }
    return maps;
  }
};

// ---- loss terms ---------------------------------------------------------------

// sum |a-b| over the amodal region, normalized by channels * region size.
// both sides are gated by the plane so gradients vanish outside it.
template <typename T>
Tensor<T> l1_masked(const Tensor<T>& pred, const Tensor<T>& gt,
                    const Tensor<T>& amodal) {
  if (pred.shape() != gt.shape())
    throw ShapeError("l1_masked: prediction " + shape_str(pred.shape()) +
                     " vs target " + shape_str(gt.shape()));
  double cnt = 0;
  for (T v : amodal.values()) cnt += double(v);
  if (cnt == 0) throw ValueError("l1_masked: empty amodal region");
  Tensor<T> diff = abs(sub(mul(pred, amodal), mul(gt, amodal)));
  return mul_scalar(sum(diff), T(1.0 / (double(pred.dim(1)) * cnt)));
}

// gram matrix per sample: F F^T over flattened spatial, scaled by 1/(C*H*W)
template <typename T>
Tensor<T> gram_matrix(const Tensor<T>& f) {
  int64_t N = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  Tensor<T> fr = reshape(f, {N, C, H * W});
  Tensor<T> g = matmul(fr, permute(fr, {0, 2, 1}));
  return mul_scalar(g, T(1.0 / double(C * H * W)));
}

// non-saturating logistic forms
template <typename T>
Tensor<T> adv_g_from_logits(const Tensor<T>& fake_logits) {
  return mean(softplus(neg(fake_logits)));
}

template <typename T>
Tensor<T> disc_loss_from_logits(const Tensor<T>& real_logits,
                                const Tensor<T>& fake_logits, double coeff) {
  Tensor<T> lr = mean(softplus(neg(real_logits)));
  Tensor<T> lf = mean(softplus(fake_logits));
  return mul_scalar(add(lr, lf), T(coeff));
}

template <typename T>
struct GenLossTerms {
  Tensor<T> l1, adv, perc, style, total;
};

// Generator objective over the amodal region. Every term reads the prediction
// only through pred * amodal, so d total / d pred is exactly zero outside it.
template <typename T>
struct AmodalGanLoss {
  LossWeights w;
  FeatureNet<T> features;

  explicit AmodalGanLoss(LossWeights w_ = {}, uint64_t feature_seed = 1234)
      : w(w_), features(feature_seed) {}

  GenLossTerms<T> generator_loss(const Tensor<T>& pred, const Tensor<T>& gt,
                                 const Tensor<T>& amodal,
                                 const PatchDiscriminator<T>& d) const {
    Tensor<T> pm = mul(pred, amodal);
    Tensor<T> gm = mul(gt, amodal);
    GenLossTerms<T> t;
    t.l1 = l1_masked(pred, gt, amodal);
    // weight 0 turns the adversarial term off entirely (GAN-off training)
    t.adv = w.adv == 0 ? mul_scalar(t.l1, T(0))
                       : adv_g_from_logits(d.forward(pm));
    auto fa = features.forward(pm);
    auto fb = features.forward(gm);
    Tensor<T> perc, style;
    for (size_t i = 0; i < fa.size(); ++i) {
      Tensor<T> p = mean(abs(sub(fa[i], fb[i])));
      Tensor<T> s = mean(abs(sub(gram_matrix(fa[i]), gram_matrix(fb[i]))));
      perc = i ? add(perc, p) : p;
      style = i ? add(style, s) : s;
    }
    t.perc = perc;
    t.style = style;
    t.total = add(add(mul_scalar(t.l1, T(w.l1)), mul_scalar(t.adv, T(w.adv))),
                  add(mul_scalar(t.perc, T(w.perc)),
                      mul_scalar(t.style, T(w.style))));
    return t;
  }

  // fake side must already be detached from the generator graph
  Tensor<T> discriminator_loss(const PatchDiscriminator<T>& d,
                               const Tensor<T>& gt, const Tensor<T>& pred_detached,
                               const Tensor<T>& amodal) const {
    Tensor<T> real = d.forward(mul(gt, amodal));
    Tensor<T> fake = d.forward(mul(pred_detached, amodal));
    return disc_loss_from_logits(real, fake, w.disc);
  }
};

}  // namespace dmat
