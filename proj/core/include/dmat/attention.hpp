#pragma once

#include "dmat/mask.hpp"
#include "dmat/nn.hpp"

namespace dmat {

// ---- grad-free [N,H,W,1] plane helpers -------------------------------------
// Tensor counterparts of the Mask-level resize/spread rules so batched plane
// stacks can ride alongside token tensors. Values must stay in {0,1}.

namespace detail {
template <typename T>
inline void check_plane(const Tensor<T>& p, const char* who) {
  if (p.ndim() != 4 || p.dim(3) != 1)
    throw ShapeError(std::string(who) + ": expected [N,H,W,1], got " +
                     shape_str(p.shape()));
}
}  // namespace detail

// block-reduce by `factor`; a cell is valid if any source cell in the block is
template <typename T>
Tensor<T> plane_any_valid_down(const Tensor<T>& p, int factor) {
  detail::check_plane(p, "plane_any_valid_down");
  int64_t N = p.dim(0), H = p.dim(1), W = p.dim(2), f = factor;
  if (f < 1 || H % f || W % f)
    throw ValueError("plane_any_valid_down: factor " + std::to_string(factor) +
                     " does not divide " + std::to_string(H) + "x" +
                     std::to_string(W));
  Tensor<T> out({N, H / f, W / f, 1});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < H / f; ++y)
      for (int64_t x = 0; x < W / f; ++x) {
        T v = T(0);
        for (int64_t dy = 0; dy < f && v == T(0); ++dy)
          for (int64_t dx = 0; dx < f; ++dx)
            if (p.at({n, y * f + dy, x * f + dx, 0}) > T(0.5)) {
              v = T(1);
              break;
            }
        out.at({n, y, x, 0}) = v;
      }
  return out;
}

// block-reduce by `factor`; a cell is valid iff at least half the block is
template <typename T>
Tensor<T> plane_majority_down(const Tensor<T>& p, int factor) {
  detail::check_plane(p, "plane_majority_down");
  int64_t N = p.dim(0), H = p.dim(1), W = p.dim(2), f = factor;
  if (f < 1 || H % f || W % f)
    throw ValueError("plane_majority_down: factor " + std::to_string(factor) +
                     " does not divide " + std::to_string(H) + "x" +
                     std::to_string(W));
  Tensor<T> out({N, H / f, W / f, 1});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < H / f; ++y)
      for (int64_t x = 0; x < W / f; ++x) {
        int64_t ones = 0;
        for (int64_t dy = 0; dy < f; ++dy)
          for (int64_t dx = 0; dx < f; ++dx)
            if (p.at({n, y * f + dy, x * f + dx, 0}) > T(0.5)) ++ones;
        out.at({n, y, x, 0}) = T(2 * ones >= f * f ? 1 : 0);
      }
  return out;
}

template <typename T>
Tensor<T> plane_replicate_up(const Tensor<T>& p, int factor) {
  detail::check_plane(p, "plane_replicate_up");
  int64_t N = p.dim(0), H = p.dim(1), W = p.dim(2), f = factor;
  if (f < 1) throw ValueError("plane_replicate_up: factor must be >= 1");
  Tensor<T> out({N, H * f, W * f, 1});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < H * f; ++y)
      for (int64_t x = 0; x < W * f; ++x)
        out.at({n, y, x, 0}) = p.at({n, y / f, x / f, 0});
  return out;
}

// window spill: a (cyclically shifted) window holding at least one valid cell
// becomes entirely valid; all-invalid windows stay invalid
template <typename T>
Tensor<T> plane_validity_spread(const Tensor<T>& p, int wsz, int shift) {
  detail::check_plane(p, "plane_validity_spread");
  int64_t N = p.dim(0), H = p.dim(1), W = p.dim(2);
  if (wsz < 1 || H % wsz || W % wsz)
    throw ValueError("plane_validity_spread: window " + std::to_string(wsz) +
                     " does not tile " + std::to_string(H) + "x" +
                     std::to_string(W));
  Tensor<T> out({N, H, W, 1});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t wy = 0; wy < H / wsz; ++wy)
      for (int64_t wx = 0; wx < W / wsz; ++wx) {
        bool any = false;
        for (int64_t ly = 0; ly < wsz && !any; ++ly)
          for (int64_t lx = 0; lx < wsz; ++lx) {
            auto [sy, sx] = window_src(wy, wx, ly, lx, wsz, shift, H, W);
            if (p.at({n, sy, sx, 0}) > T(0.5)) {
              any = true;
              break;
            }
          }
        for (int64_t ly = 0; ly < wsz; ++ly)
          for (int64_t lx = 0; lx < wsz; ++lx) {
            auto [sy, sx] = window_src(wy, wx, ly, lx, wsz, shift, H, W);
            out.at({n, sy, sx, 0}) = any ? T(1) : p.at({n, sy, sx, 0});
          }
      }
  return out;
}

// ---- mask-aware window attention --------------------------------------------

// additive logit offsets per region type, applied before the 1/sqrt(d_k) scale
struct MaskBiasTaus {
  double inv = -100.0;
  double modal = 30.0;
  double occ = -100.0;
};

// region bias for one window batch: sum_t alpha[t, l] * tau_t * plane_t[w, l].
// alpha [3, L] is learnable and stays in the graph; planes [Wn, L, 1] are
// grad-free window partitions of the {invisible, modal, occluder} planes.
// Returns [Wn, 1, 1, L], broadcast over heads and query index.
template <typename T>
Tensor<T> window_mask_bias(const Tensor<T>& alpha, const Tensor<T>& inv_w,
                           const Tensor<T>& modal_w, const Tensor<T>& occ_w,
                           MaskBiasTaus taus = {}) {
  int64_t Wn = inv_w.dim(0), L = inv_w.dim(1);
  if (alpha.shape() != Shape{3, L})
    throw ShapeError("window_mask_bias: alpha " + shape_str(alpha.shape()) +
                     " does not match window length " + std::to_string(L));
  auto term = [&](int t, const Tensor<T>& plane, double tau) {
    Tensor<T> row = slice(alpha, 0, t, 1);  // [1, L]
    Tensor<T> scaled = mul_scalar(reshape(plane, {Wn, L}), T(tau));
    return mul(row, scaled);  // [Wn, L]
  };
  Tensor<T> bias = add(add(term(0, inv_w, taus.inv), term(1, modal_w, taus.modal)),
                       term(2, occ_w, taus.occ));
  return reshape(bias, {Wn, 1, 1, L});
}

template <typename T>
struct WindowAttention {
  Linear<T> qkv, proj;
  int heads = 4;

  WindowAttention() = default;
  WindowAttention(Rng& rng, int64_t ch, int heads_)
      : qkv(rng, ch, 3 * ch), proj(rng, ch, ch), heads(heads_) {
    if (ch % heads_)
      throw ValueError("attention: channels " + std::to_string(ch) +
                       " not divisible by " + std::to_string(heads_) +
                       " heads");
  }

  // tokens [Wn, L, C]; optional bias [Wn,1,1,L] added before the 1/sqrt(d_k)
  // scale, optional invalid-key offset [Wn,1,1,L] added after it. attn_out,
  // when given, receives the softmaxed weights [Wn, heads, L, L].
  Tensor<T> forward(const Tensor<T>& tokens, const Tensor<T>* bias,
                    const Tensor<T>* invalid,
                    Tensor<T>* attn_out = nullptr) const {
    int64_t Wn = tokens.dim(0), L = tokens.dim(1), C = tokens.dim(2);
    int64_t dk = C / heads;
    Tensor<T> qkv3 = qkv.forward(tokens);  // [Wn, L, 3C]
    auto head_split = [&](int64_t off) {
      Tensor<T> s = slice(qkv3, 2, off, C);
      return permute(reshape(s, {Wn, L, heads, dk}), {0, 2, 1, 3});
    };
    Tensor<T> q = head_split(0), k = head_split(C), v = head_split(2 * C);
    Tensor<T> logits = matmul(q, permute(k, {0, 1, 3, 2}));  // [Wn,h,L,L]
    if (bias) logits = add(logits, *bias);
    logits = mul_scalar(logits, T(1.0 / std::sqrt(double(dk))));
    if (invalid) logits = add(logits, *invalid);
    Tensor<T> a = softmax(logits, 3);
    if (attn_out) *attn_out = a;
    Tensor<T> o = matmul(a, v);  // [Wn, h, L, dk]
    o = reshape(permute(o, {0, 2, 1, 3}), {Wn, L, C});
    return proj.forward(o);
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    qkv.register_params(r, p + ".qkv");
    proj.register_params(r, p + ".proj");
  }
};

// pre-norm windowed attention block with a one-hidden-layer token MLP
template <typename T>
struct DhmgaBlock {
  LayerNormLast<T> ln1, ln2;
  WindowAttention<T> attn;
  Linear<T> fc1, fc2;
  Tensor<T> g1, g2;  // zero-init residual gates; blocks start as identity
  int wsz = 8, shift = 0;
  bool mask_aware = true;
  MaskBiasTaus taus{};

  DhmgaBlock() = default;
  DhmgaBlock(Rng& rng, int64_t ch, int heads, int wsz_, int shift_,
             bool mask_aware_, MaskBiasTaus taus_ = {})
      : ln1(ch),
        ln2(ch),
        attn(rng, ch, heads),
        fc1(rng, ch, ch),
        fc2(rng, ch, ch),
        g1(Tensor<T>::zeros({1})),
        g2(Tensor<T>::zeros({1})),
        wsz(wsz_),
        shift(shift_),
        mask_aware(mask_aware_),
        taus(taus_) {
    g1.set_requires_grad(true);
    g2.set_requires_grad(true);
  }

  // x [N,H,W,C]; validity/modal/occ [N,H,W,1] grad-free; inv_bias [N,H,W,1]
  // marks the region biased with tau_inv (the not-yet-filled hole on encoder
  // levels, the original invisible region on decoder levels); alpha [3, wsz^2]
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& validity,
                    const Tensor<T>& inv_bias, const Tensor<T>& modal,
                    const Tensor<T>& occ, const Tensor<T>& alpha) const {
    int64_t N = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor<T> h = window_partition(ln1.forward(x), wsz, shift);
    Tensor<T> ao;
    if (mask_aware) {
      Tensor<T> iw = window_partition(inv_bias, wsz, shift);
      Tensor<T> mw = window_partition(modal, wsz, shift);
      Tensor<T> ow = window_partition(occ, wsz, shift);
      Tensor<T> bias = window_mask_bias(alpha, iw, mw, ow, taus);
      Tensor<T> vw = window_partition(validity, wsz, shift);
      int64_t Wn = vw.dim(0), L = vw.dim(1);
      // never-valid keys get a large negative offset after scaling
      Tensor<T> invalid = reshape(
          mul_scalar(add_scalar(reshape(vw, {Wn, L}), T(-1)), T(1e4)),
          {Wn, 1, 1, L});
      ao = attn.forward(h, &bias, &invalid);
    } else {
      ao = attn.forward(h, nullptr, nullptr);
    }
    Tensor<T> x1 = add(x, mul(window_reverse(ao, wsz, shift, N, H, W), g1));
    Tensor<T> m = fc2.forward(silu(fc1.forward(ln2.forward(x1))));
    return add(x1, mul(m, g2));
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    ln1.register_params(r, p + ".ln1");
    attn.register_params(r, p + ".attn");
    ln2.register_params(r, p + ".ln2");
    fc1.register_params(r, p + ".fc1");
    fc2.register_params(r, p + ".fc2");
    r.add(p + ".g1", g1);
    r.add(p + ".g2", g2);
  }
};

// ---- five-level U-shaped body ------------------------------------------------

struct BodyConfig {
  int64_t in_channels = 256;
  int64_t channels = 128;
  std::vector<int> depths{2, 2, 6, 2, 2};
  std::vector<int> windows{8, 8, 4, 8, 8};
  int heads = 4;
  bool enabled = true;            // mask-aware logit terms and validity spread
  std::string skip_mode = "add";  // "add" | "concat"
  MaskBiasTaus taus{};            // per-region logit offsets; 0 drops a term
  bool alpha_trainable = true;
  double alpha_init = 1.0;

  void validate() const {
    if (depths.size() != 5 || windows.size() != 5)
      throw ValueError("body: exactly five levels expected");
    if (channels % heads)
      throw ValueError("body: channels " + std::to_string(channels) +
                       " not divisible by " + std::to_string(heads) + " heads");
    for (int d : depths)
      if (d < 1) throw ValueError("body: level depths must be >= 1");
    for (int w : windows)
      if (w < 1) throw ValueError("body: window sizes must be >= 1");
    if (skip_mode != "add" && skip_mode != "concat")
      throw ValueError("body: unknown skip_mode '" + skip_mode + "'");
  }
};

template <typename T>
struct BodyOut {
  Tensor<T> y;         // [N, channels, gh, gw]
  Tensor<T> validity;  // [N, 1, gh, gw], grad-free
};

// Grids per level: g, g/2, g/4, g/2, g. Levels 0-2 update token validity by
// window spill after every block; levels 3-4 reuse the bottleneck-final
// validity and bias with the original invisible region instead. Skips:
// level0 -> level4 and level1 -> level3.
template <typename T>
struct DhmgaBody {
  BodyConfig cfg;
  int64_t gh = 0, gw = 0;
  std::vector<int> eff_wsz;  // per level, divides that level's grid
  Linear<T> entry;
  std::vector<std::vector<DhmgaBlock<T>>> levels;
  std::vector<Tensor<T>> alphas;  // per level [3, wsz^2]; empty when disabled
  Conv2dLayer<T> down1, down2, up1, up2;
  Linear<T> skip3, skip4;  // concat mode projections, levels 3 and 4
  LayerNormLast<T> final_ln;

  DhmgaBody() = default;
  DhmgaBody(Rng& rng, BodyConfig cfg_, int64_t gh_, int64_t gw_)
      : cfg(std::move(cfg_)), gh(gh_), gw(gw_), final_ln(cfg.channels) {
    cfg.validate();
    if (gh % 4 || gw % 4)
      throw ValueError("body: entry grid " + std::to_string(gh) + "x" +
                       std::to_string(gw) + " must be a multiple of 4");
    int64_t C = cfg.channels;
    entry = Linear<T>(rng, cfg.in_channels, C);
    static const int64_t divs[5] = {1, 2, 4, 2, 1};
    for (int l = 0; l < 5; ++l) {
      int64_t lh = gh / divs[l], lw = gw / divs[l];
      int w = int(std::min<int64_t>(cfg.windows[l], std::min(lh, lw)));
      while (lh % w || lw % w) --w;  // largest tiling window <= requested
      eff_wsz.push_back(w);
      std::vector<DhmgaBlock<T>> blocks;
      for (int i = 0; i < cfg.depths[l]; ++i) {
        int shift = (i % 2 && w > 1) ? w / 2 : 0;
        blocks.emplace_back(rng, C, cfg.heads, w, shift, cfg.enabled, cfg.taus);
      }
      levels.push_back(std::move(blocks));
      if (cfg.enabled) {
        Tensor<T> a = Tensor<T>::full({3, int64_t(w) * w}, T(cfg.alpha_init));
        a.set_requires_grad(cfg.alpha_trainable);
        alphas.push_back(a);
      }
    }
    down1 = Conv2dLayer<T>(rng, C, C, 3, 2, 1);
    down2 = Conv2dLayer<T>(rng, C, C, 3, 2, 1);
    up1 = Conv2dLayer<T>(rng, C, C, 3, 1, 1);
    up2 = Conv2dLayer<T>(rng, C, C, 3, 1, 1);
    if (cfg.skip_mode == "concat") {
      skip3 = Linear<T>(rng, 2 * C, C);
      skip4 = Linear<T>(rng, 2 * C, C);
    }
  }

  // x [N,in_channels,gh,gw]; planes [N,1,gh,gw] grad-free: validity0 from the
  // embedding head, inv/modal/occ are the dataset planes reduced to the grid
  BodyOut<T> forward(const Tensor<T>& x, const Tensor<T>& validity0,
                     const Tensor<T>& inv0, const Tensor<T>& modal0,
                     const Tensor<T>& occ0) const {
    if (x.ndim() != 4 || x.dim(1) != cfg.in_channels)
      throw ShapeError("body: expected [N," + std::to_string(cfg.in_channels) +
                       ",gh,gw], got " + shape_str(x.shape()));
    if (x.dim(2) != gh || x.dim(3) != gw)
      throw ShapeError("body: grid " + std::to_string(x.dim(2)) + "x" +
                       std::to_string(x.dim(3)) + " does not match construction " +
                       std::to_string(gh) + "x" + std::to_string(gw));
    auto nhwc = [](const Tensor<T>& t) { return permute(t, {0, 2, 3, 1}); };
    auto nchw = [](const Tensor<T>& t) { return permute(t, {0, 3, 1, 2}); };

    Tensor<T> t = entry.forward(nhwc(x));
    Tensor<T> v = nhwc(validity0);
    Tensor<T> inv_g = nhwc(inv0), mo_g = nhwc(modal0), oc_g = nhwc(occ0);
    Tensor<T> mo2 = plane_any_valid_down(mo_g, 2), mo4 = plane_any_valid_down(mo_g, 4);
    Tensor<T> oc2 = plane_any_valid_down(oc_g, 2), oc4 = plane_any_valid_down(oc_g, 4);
    Tensor<T> inv2 = plane_any_valid_down(inv_g, 2);
    const Tensor<T>* mo[5] = {&mo_g, &mo2, &mo4, &mo2, &mo_g};
    const Tensor<T>* oc[5] = {&oc_g, &oc2, &oc4, &oc2, &oc_g};

    Tensor<T> none;
    auto run_encoder_level = [&](int l) {
      for (auto& b : levels[size_t(l)]) {
        Tensor<T> hole = cfg.enabled
                             ? mul_scalar(add_scalar(v, T(-1)), T(-1))  // 1 - v
                             : none;
        t = b.forward(t, v, hole, *mo[l], *oc[l],
                      cfg.enabled ? alphas[size_t(l)] : none);
        if (cfg.enabled) v = plane_validity_spread(v, b.wsz, b.shift);
      }
    };

    run_encoder_level(0);
    Tensor<T> s0 = t;
    t = nhwc(down1.forward(nchw(t)));
    v = plane_any_valid_down(v, 2);
    run_encoder_level(1);
    Tensor<T> s1 = t;
    t = nhwc(down2.forward(nchw(t)));
    v = plane_any_valid_down(v, 2);
    run_encoder_level(2);
    Tensor<T> v_final = v;

    auto fuse = [&](const Tensor<T>& a, const Tensor<T>& s, const Linear<T>& pr) {
      if (cfg.skip_mode == "add") return add(a, s);
      return pr.forward(concat({a, s}, 3));
    };
    t = fuse(nhwc(up1.forward(bilinear_upsample(nchw(t), 2))), s1, skip3);
    Tensor<T> v3 = plane_replicate_up(v_final, 2);
    for (auto& b : levels[3])
      t = b.forward(t, v3, inv2, *mo[3], *oc[3],
                    cfg.enabled ? alphas[3] : none);
    t = fuse(nhwc(up2.forward(bilinear_upsample(nchw(t), 2))), s0, skip4);
    Tensor<T> v4 = plane_replicate_up(v_final, 4);
    for (auto& b : levels[4])
      t = b.forward(t, v4, inv_g, *mo[4], *oc[4],
                    cfg.enabled ? alphas[4] : none);

    t = final_ln.forward(t);
    return {nchw(t), nchw(v4)};
  }

  void register_params(ParamRegistry<T>& r, const std::string& p) const {
    entry.register_params(r, p + ".entry");
    for (size_t l = 0; l < levels.size(); ++l) {
      std::string lp = p + ".level" + std::to_string(l);
      if (cfg.enabled) r.add(lp + ".alpha", alphas[l]);
      for (size_t i = 0; i < levels[l].size(); ++i)
        levels[l][i].register_params(r, lp + ".block" + std::to_string(i));
    }
    down1.register_params(r, p + ".down1");
    down2.register_params(r, p + ".down2");
    up1.register_params(r, p + ".up1");
    up2.register_params(r, p + ".up2");
    if (cfg.skip_mode == "concat") {
      skip3.register_params(r, p + ".skip3");
      skip4.register_params(r, p + ".skip4");
    }
    final_ln.register_params(r, p + ".final_ln");
  }
};

}  // namespace dmat
