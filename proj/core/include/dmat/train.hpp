#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <vector>

#include "dmat/checkpoint.hpp"
#include "dmat/config.hpp"
#include "dmat/generator.hpp"
#include "dmat/losses.hpp"
#include "dmat/synth.hpp"

namespace dmat {

// piecewise-constant schedule; an iteration equal to a boundary already uses
// the next segment's rate
inline double lr_at(const std::vector<int64_t>& boundaries,
                    const std::vector<double>& lrs, int64_t iteration) {
  if (lrs.size() != boundaries.size() + 1)
    throw ValueError("lr_at: need exactly one more lr than boundaries");
  if (iteration < 0) throw ValueError("lr_at: iteration must be >= 0");
  size_t j = 0;
  while (j < boundaries.size() && boundaries[j] <= iteration) ++j;
  return lrs[j];
}

// Adam over a parameter registry; moments are aligned with registry order.
// Parameters that carry no gradient (frozen or outside the graph) are skipped.
template <typename T>
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t steps = 0;
  std::vector<std::vector<T>> m, v;

  void init(const ParamRegistry<T>& params) {
    m.clear();
    v.clear();
    for (const auto& [_, t] : params.items) {
      m.emplace_back(size_t(t.numel()), T(0));
      v.emplace_back(size_t(t.numel()), T(0));
    }
  }

  void step(ParamRegistry<T>& params, double lr) {
    if (m.size() != params.items.size())
      throw ContractError("adam: moments not initialized for this registry");
    ++steps;
    double c1 = 1.0 - std::pow(beta1, double(steps));
    double c2 = 1.0 - std::pow(beta2, double(steps));
    for (size_t i = 0; i < params.items.size(); ++i) {
      Tensor<T>& t = params.items[i].second;
      if (!t.requires_grad() || !t.has_grad()) continue;
      auto g = t.grad_view();
      auto w = t.values();
      auto& mi = m[i];
      auto& vi = v[i];
      for (size_t k = 0; k < w.size(); ++k) {
        mi[k] = T(beta1 * mi[k] + (1.0 - beta1) * g[k]);
        vi[k] = T(beta2 * vi[k] + (1.0 - beta2) * double(g[k]) * double(g[k]));
        double mh = mi[k] / c1;
        double vh = vi[k] / c2;
        w[k] = T(w[k] - lr * mh / (std::sqrt(vh) + eps));
      }
    }
  }
};

// Shadow copy of the generator weights nudged toward the live parameters by a
// fixed fraction per step; apply/restore swap it in for evaluation.
template <typename T>
struct Ema {
  double decay = 1e-5;  // fraction moved toward the live params per update
  std::vector<std::vector<T>> shadow, stash;
  bool applied = false;

  void init(const ParamRegistry<T>& params) {
    shadow.clear();
    for (const auto& [_, t] : params.items) {
      auto vals = t.values();
      shadow.emplace_back(vals.begin(), vals.end());
    }
  }

  void update(const ParamRegistry<T>& params) {
    if (applied)
      throw ContractError("ema: update while shadow weights are applied");
    if (shadow.size() != params.items.size())
      throw ContractError("ema: shadow not initialized for this registry");
    // s + d(p - s) rather than (1-d)s + dp: algebraically identical but an
    // exact fixed point when params sit still
    for (size_t i = 0; i < shadow.size(); ++i) {
      auto vals = params.items[i].second.values();
      auto& s = shadow[i];
      for (size_t k = 0; k < s.size(); ++k)
        s[k] = T(s[k] + decay * (double(vals[k]) - double(s[k])));
    }
  }

  void apply(ParamRegistry<T>& params) {
    if (applied)
      throw ContractError("ema: apply called twice without restore");
    stash.clear();
    for (size_t i = 0; i < shadow.size(); ++i) {
      auto vals = params.items[i].second.values();
      stash.emplace_back(vals.begin(), vals.end());
      for (size_t k = 0; k < shadow[i].size(); ++k) vals[k] = shadow[i][k];
    }
    applied = true;
  }

  void restore(ParamRegistry<T>& params) {
    if (!applied) throw ContractError("ema: restore without a prior apply");
    for (size_t i = 0; i < stash.size(); ++i) {
      auto vals = params.items[i].second.values();
      for (size_t k = 0; k < stash[i].size(); ++k) vals[k] = stash[i][k];
    }
    stash.clear();
    applied = false;
  }
};

// a training batch as stacked tensors; planes are grad-free {0,1}
template <typename T>
struct Batch {
  Tensor<T> img;     // [N,3,S,S] occluded input
  Tensor<T> gt;      // [N,3,S,S] clean target
  Tensor<T> vis;     // [N,1,S,S] everything but the invisible region
  Tensor<T> amodal;  // [N,1,S,S]
  Tensor<T> modal;   // [N,1,S,S]
  Tensor<T> occ;     // [N,1,S,S]
  Tensor<T> inv;     // [N,1,S,S]
};

template <typename T>
Batch<T> make_batch(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ValueError("make_batch: empty batch");
  int64_t N = int64_t(samples.size());
  int64_t S = samples[0]->clean.dim(1);
  for (const Sample* s : samples)
    if (s->clean.dim(1) != S || s->clean.dim(2) != S ||
        s->masks.h != S || s->masks.w != S)
      throw ShapeError("make_batch: sample " + s->id +
                       " disagrees with the batch image size " +
                       std::to_string(S));
  Batch<T> b;
  b.img = Tensor<T>::zeros({N, 3, S, S});
  b.gt = Tensor<T>::zeros({N, 3, S, S});
  for (Tensor<T>* p : {&b.vis, &b.amodal, &b.modal, &b.occ, &b.inv})
    *p = Tensor<T>::zeros({N, 1, S, S});
  for (int64_t n = 0; n < N; ++n) {
    const Sample& s = *samples[n];
    auto src_occ = s.occluded.values();
    auto src_cln = s.clean.values();
    int64_t img_sz = 3 * S * S;
    for (int64_t k = 0; k < img_sz; ++k) {
      b.img.values()[size_t(n * img_sz + k)] = T(src_occ[size_t(k)]);
      b.gt.values()[size_t(n * img_sz + k)] = T(src_cln[size_t(k)]);
    }
    int64_t pl = S * S;
    for (int64_t k = 0; k < pl; ++k) {
      size_t dst = size_t(n * pl + k);
      b.vis.values()[dst] = T(s.masks.visible.v[size_t(k)]);
      b.amodal.values()[dst] = T(s.masks.amodal.v[size_t(k)]);
      b.modal.values()[dst] = T(s.masks.modal.v[size_t(k)]);
      b.occ.values()[dst] = T(s.masks.occlusion.v[size_t(k)]);
      b.inv.values()[dst] = T(s.masks.invisible.v[size_t(k)]);
    }
  }
  return b;
}

struct StepMetrics {
  int64_t iteration = 0;  // zero-based index of the step just taken
  double lr = 0, l1 = 0, adv_g = 0, adv_d = 0, perc = 0, style = 0, total = 0;
};

inline constexpr const char* kTrainCsvHeader =
    "iter,lr,l1,adv_g,adv_d,perc,style,total";

inline std::string csv_row(const StepMetrics& s) {
  auto num = [](double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
  };
  return std::to_string(s.iteration) + "," + num(s.lr) + "," + num(s.l1) +
         "," + num(s.adv_g) + "," + num(s.adv_d) + "," + num(s.perc) + "," +
         num(s.style) + "," + num(s.total);
}

// One training thread owns generator, discriminator and optimizer state.
// Batch choice is a pure function of (seed, iteration) so interrupted and
// resumed runs replay the same data order.
template <typename T>
struct Trainer {
  DmatConfig cfg;
  uint64_t cfg_hash = 0;
  Generator<T> gen;
  PatchDiscriminator<T> disc;
  AmodalGanLoss<T> loss;
  ParamRegistry<T> gparams, dparams;
  Adam<T> gopt, dopt;
  Ema<T> ema;
  int64_t iteration = 0;

  explicit Trainer(const DmatConfig& c) : cfg(c), cfg_hash(config_hash(c)) {
    cfg.validate();
    Rng grng = Rng::derive(cfg.seed, 1);
    gen = Generator<T>(grng, cfg.generator_config());
    Rng drng = Rng::derive(cfg.seed, 2);
    DiscConfig dc;
    dc.channels = cfg.disc_channels;
    disc = PatchDiscriminator<T>(drng, dc);
    loss = AmodalGanLoss<T>(cfg.loss_weights(), cfg.feature_seed);
    gen.register_params(gparams, "gen");
    disc.register_params(dparams, "disc");
    gopt.init(gparams);
    dopt.init(dparams);
    ema.decay = cfg.ema_decay;
    ema.init(gparams);
  }

  // Epoch-shuffled sampling without replacement, computed statelessly from
  // (seed, iteration) so a resumed run sees the identical data order. Data
  // streams start at 3; streams 1 and 2 seeded the two networks.
  std::vector<const Sample*> pick_batch(
      const std::vector<Sample>& data) const {
    if (data.empty()) throw ValueError("train: dataset is empty");
    int64_t n = int64_t(data.size());
    auto permutation = [&](int64_t epoch) {
      std::vector<int64_t> p(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) p[size_t(i)] = i;
      Rng r = Rng::derive(cfg.seed, 3 + uint64_t(epoch));
      for (int64_t i = n - 1; i > 0; --i)
        std::swap(p[size_t(i)], p[size_t(r.uniform_int(uint64_t(i + 1)))]);
      return p;
    };
    std::vector<const Sample*> out;
    int64_t epoch = -1;
    std::vector<int64_t> perm;
    for (int64_t i = 0; i < cfg.batch; ++i) {
      int64_t pos = iteration * cfg.batch + i;
      if (pos / n != epoch) {
        epoch = pos / n;
        perm = permutation(epoch);
      }
      out.push_back(&data[size_t(perm[size_t(pos % n)])]);
    }
    return out;
  }

  StepMetrics train_step(const std::vector<Sample>& data) {
    Batch<T> b = make_batch<T>(pick_batch(data));
    if (b.img.dim(2) != cfg.image)
      throw ShapeError("train: dataset image size " +
                       std::to_string(b.img.dim(2)) +
                       " disagrees with configured " +
                       std::to_string(cfg.image));
    double lr = lr_at(cfg.lr_boundaries, cfg.lrs, iteration);
    Tensor<T> whole = Tensor<T>::ones(b.amodal.shape());
    const Tensor<T>& lossplane = cfg.amodal_loss ? b.amodal : whole;

    StepMetrics mtr;
    mtr.iteration = iteration;
    mtr.lr = lr;
    auto finite = [&](double v, const char* component) {
      if (!std::isfinite(v))
        throw NumericError("train: non-finite " + std::string(component) +
                           " at iteration " + std::to_string(iteration));
      return v;
    };

    TapeScope<T> gscope;
    auto out = gen.forward(b.img, b.vis, b.amodal, b.modal, b.occ, b.inv);
    Tensor<T> pred = out.rgb;

    // discriminator update with the generator frozen through detachment
    if (loss.w.disc > 0) {
      TapeScope<T> dscope;
      Tensor<T> fake = pred.detach();
      Tensor<T> dl = loss.discriminator_loss(disc, b.gt, fake, lossplane);
      mtr.adv_d = finite(double(dl.item()), "adv_d");
      dparams.zero_grad();
      dscope.backward(dl);
      dopt.step(dparams, lr);
    }

    // generator update with the discriminator frozen
    dparams.set_requires_grad(false);
    auto terms = loss.generator_loss(pred, b.gt, lossplane, disc);
    mtr.l1 = finite(double(terms.l1.item()), "l1");
    mtr.adv_g = finite(double(terms.adv.item()), "adv_g");
    mtr.perc = finite(double(terms.perc.item()), "perc");
    mtr.style = finite(double(terms.style.item()), "style");
    mtr.total = finite(double(terms.total.item()), "total");
    gparams.zero_grad();
    dparams.zero_grad();
    gscope.backward(terms.total);
    dparams.set_requires_grad(true);
    gopt.step(gparams, lr);
    ema.update(gparams);
    ++iteration;
    return mtr;
  }

  Checkpoint snapshot() const {
    if (ema.applied)
      throw ContractError(
          "snapshot: restore the EMA weights before checkpointing");
    Checkpoint c;
    c.iteration = iteration;
    c.seed = cfg.seed;
    c.config_hash = cfg_hash;
    c.gen_opt_steps = gopt.steps;
    c.disc_opt_steps = dopt.steps;
    auto dump_values = [&](const std::string& name, const Tensor<T>& t) {
      CheckpointArray a;
      a.name = name;
      a.shape = t.shape();
      auto vals = t.values();
      a.data.assign(vals.begin(), vals.end());
      c.arrays.push_back(std::move(a));
    };
    auto dump_vec = [&](const std::string& name, const Tensor<T>& like,
                        const std::vector<T>& v) {
      CheckpointArray a;
      a.name = name;
      a.shape = like.shape();
      a.data.assign(v.begin(), v.end());
      c.arrays.push_back(std::move(a));
    };
    for (const auto& [n, t] : gparams.items) dump_values(n, t);
    for (const auto& [n, t] : dparams.items) dump_values(n, t);
    for (size_t i = 0; i < gparams.items.size(); ++i) {
      dump_vec("adam_m." + gparams.items[i].first, gparams.items[i].second,
               gopt.m[i]);
      dump_vec("adam_v." + gparams.items[i].first, gparams.items[i].second,
               gopt.v[i]);
      dump_vec("ema." + gparams.items[i].first, gparams.items[i].second,
               ema.shadow[i]);
    }
    for (size_t i = 0; i < dparams.items.size(); ++i) {
      dump_vec("adam_m." + dparams.items[i].first, dparams.items[i].second,
               dopt.m[i]);
      dump_vec("adam_v." + dparams.items[i].first, dparams.items[i].second,
               dopt.v[i]);
    }
    return c;
  }

  void restore(const Checkpoint& c) {
    if (c.config_hash != cfg_hash)
      throw ValueError("checkpoint config hash " +
                       std::to_string(c.config_hash) +
                       " does not match the supplied config hash " +
                       std::to_string(cfg_hash));
    auto pull = [&](const std::string& name, const Tensor<T>& like,
                    auto write) {
      const CheckpointArray* a = c.find(name);
      if (!a) throw ValueError("checkpoint: missing array '" + name + "'");
      if (a->shape != like.shape())
        throw ValueError("checkpoint: array '" + name + "' has shape " +
                         shape_str(a->shape) + ", expected " +
                         shape_str(like.shape()));
      write(*a);
    };
    auto into_tensor = [&](const std::string& name, Tensor<T>& t) {
      pull(name, t, [&](const CheckpointArray& a) {
        auto vals = t.values();
        for (size_t k = 0; k < vals.size(); ++k) vals[k] = T(a.data[k]);
      });
    };
    auto into_vec = [&](const std::string& name, const Tensor<T>& like,
                        std::vector<T>& v) {
      pull(name, like, [&](const CheckpointArray& a) {
        v.assign(a.data.begin(), a.data.end());
      });
    };
    for (auto& [n, t] : gparams.items) into_tensor(n, t);
    for (auto& [n, t] : dparams.items) into_tensor(n, t);
    for (size_t i = 0; i < gparams.items.size(); ++i) {
      const auto& [n, t] = gparams.items[i];
      into_vec("adam_m." + n, t, gopt.m[i]);
      into_vec("adam_v." + n, t, gopt.v[i]);
      into_vec("ema." + n, t, ema.shadow[i]);
    }
    for (size_t i = 0; i < dparams.items.size(); ++i) {
      const auto& [n, t] = dparams.items[i];
      into_vec("adam_m." + n, t, dopt.m[i]);
      into_vec("adam_v." + n, t, dopt.v[i]);
    }
    size_t expected = gparams.items.size() * 4 + dparams.items.size() * 3;
    if (c.arrays.size() != expected)
      throw ValueError("checkpoint: holds " + std::to_string(c.arrays.size()) +
                       " arrays, expected " + std::to_string(expected));
    iteration = c.iteration;
    gopt.steps = c.gen_opt_steps;
    dopt.steps = c.disc_opt_steps;
  }
};

}  // namespace dmat
