#pragma once

#include "dmat/attention.hpp"
#include "dmat/decoder.hpp"
#include "dmat/ech.hpp"

namespace dmat {

struct GeneratorConfig {
  int64_t image_h = 64, image_w = 64;
  EchConfig ech;
  BodyConfig body;
  DecoderConfig decoder;

  // widths are chained, not independently configured: the head feeds the body
  // feeds the decoder
  void link() {
    body.in_channels = ech.channels.back();
    decoder.in_channels = body.channels;
  }
  void validate() const {
    if (image_h % 32 || image_w % 32)
      throw ValueError("generator: image size " + std::to_string(image_h) +
                       "x" + std::to_string(image_w) +
                       " must be a multiple of 32 (8x head, 4x body grid)");
    ech.validate();
    body.validate();
    decoder.validate();
  }
};

template <typename T>
struct GeneratorOut {
  Tensor<T> rgb;       // [N,3,H,W] tanh range
  Tensor<T> raw;       // [N,decoder.channels[2],H,W]
  Tensor<T> validity;  // [N,1,H/8,W/8], grad-free
};

template <typename T>
struct Generator {
  GeneratorConfig cfg;
  EchHead<T> ech;
  DhmgaBody<T> body;
  Decoder<T> dec;

  Generator() = default;
  Generator(Rng& rng, GeneratorConfig cfg_) : cfg(std::move(cfg_)) {
    cfg.link();
    cfg.validate();
    ech = EchHead<T>(rng, cfg.ech);
    body = DhmgaBody<T>(rng, cfg.body, cfg.image_h / 8, cfg.image_w / 8);
    dec = Decoder<T>(rng, cfg.decoder);
  }

  // img [N,3,H,W] in [-1,1]; planes [N,1,H,W] grad-free {0,1}:
  // vis = observed pixels (everything but the invisible human region),
  // amodal = full human extent, modal = visible human, occ = occluder,
  // inv = amodal minus modal
  GeneratorOut<T> forward(const Tensor<T>& img, const Tensor<T>& vis,
                          const Tensor<T>& amodal, const Tensor<T>& modal,
                          const Tensor<T>& occ, const Tensor<T>& inv) const {
    Tensor<T> x5 = EchHead<T>::stack_input(img, vis, amodal);
    auto [feat, validity_g] = ech.forward(x5, vis);
    auto reduce = [](const Tensor<T>& p, int f) {
      return permute(plane_any_valid_down(permute(p, {0, 2, 3, 1}), f),
                     {0, 3, 1, 2});
    };
    auto bo = body.forward(feat, validity_g, reduce(inv, 8), reduce(modal, 8),
                           reduce(occ, 8));
    auto dout = dec.forward(bo.y, amodal);
    return {dout.rgb, dout.raw, bo.validity};
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    ech.register_params(r, p + ".ech");
    body.register_params(r, p + ".body");
    dec.register_params(r, p + ".dec");
  }
};

}  // namespace dmat
