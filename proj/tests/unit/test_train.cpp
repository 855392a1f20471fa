#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <vector>

#include "dmat/train.hpp"
#include "doctest.h"

using namespace dmat;

namespace {

// small architecture so optimizer-contract tests run in seconds
DmatConfig tiny_config() {
  DmatConfig cfg;
  cfg.image = 32;
  cfg.ech_kernels = {3, 3, 3};
  cfg.ech_channels = {8, 12, 16};
  cfg.body_channels = 16;
  cfg.body_heads = 2;
  cfg.body_depths = {1, 1, 1, 1, 1};
  cfg.decoder_channels = {16, 8, 6};
  cfg.disc_channels = {8, 12, 16, 20};
  cfg.batch = 2;
  cfg.synth_count = 4;
  cfg.seed = 11;
  return cfg;
}

std::vector<Sample> tiny_dataset(const DmatConfig& cfg, int64_t count) {
  SynthConfig sc = cfg.synth_config();
  sc.count = count;
  std::vector<Sample> out;
  for (int64_t i = 0; i < count; ++i) out.push_back(synth_sample(sc, i));
  return out;
}

bool params_equal(const ParamRegistry<float>& a,
                  const ParamRegistry<float>& b) {
  if (a.items.size() != b.items.size()) return false;
  for (size_t i = 0; i < a.items.size(); ++i) {
    auto va = a.items[i].second.values();
    auto vb = b.items[i].second.values();
    if (a.items[i].first != b.items[i].first || va.size() != vb.size())
      return false;
    for (size_t k = 0; k < va.size(); ++k)
      if (va[k] != vb[k]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("lr schedule is piecewise constant with next-segment boundaries") {
  std::vector<int64_t> bounds{1000, 20000, 60000, 150000};
  std::vector<double> lrs{1e-2, 1e-3, 2e-4, 1e-4, 5e-5};
  CHECK(lr_at(bounds, lrs, 0) == doctest::Approx(1e-2));
  CHECK(lr_at(bounds, lrs, 999) == doctest::Approx(1e-2));
  CHECK(lr_at(bounds, lrs, 1000) == doctest::Approx(1e-3));
  CHECK(lr_at(bounds, lrs, 20000) == doctest::Approx(2e-4));
  CHECK(lr_at(bounds, lrs, 59999) == doctest::Approx(2e-4));
  CHECK(lr_at(bounds, lrs, 1000000000) == doctest::Approx(5e-5));
  CHECK_THROWS_AS(lr_at(bounds, {1e-2, 1e-3}, 0), ValueError);
  CHECK_THROWS_AS(lr_at(bounds, lrs, -1), ValueError);
}

TEST_CASE("adam matches a hand-rolled scalar recurrence") {
  ParamRegistry<double> reg;
  Tensor<double> p = Tensor<double>::full({1}, 0.5);
  p.set_requires_grad(true);
  reg.add("p", p);
  Adam<double> opt;
  opt.init(reg);

  double w = 0.5, m = 0, v = 0;
  std::vector<double> grads{0.3, -0.2, 0.05, 0.4, -0.1};
  double lr = 1e-2;
  for (size_t t = 0; t < grads.size(); ++t) {
    p.zero_grad();
    p.grad()[0] = grads[t];
    opt.step(reg, lr);
    m = 0.9 * m + 0.1 * grads[t];
    v = 0.999 * v + 0.001 * grads[t] * grads[t];
    double mh = m / (1.0 - std::pow(0.9, double(t + 1)));
    double vh = v / (1.0 - std::pow(0.999, double(t + 1)));
    w -= lr * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.values()[0] == doctest::Approx(w).epsilon(1e-12));
  }
  CHECK(opt.steps == 5);
}

TEST_CASE("adam skips parameters without gradients") {
  ParamRegistry<double> reg;
  Tensor<double> live = Tensor<double>::full({2}, 1.0);
  live.set_requires_grad(true);
  Tensor<double> frozen = Tensor<double>::full({2}, 1.0);
  reg.add("live", live);
  reg.add("frozen", frozen);
  Adam<double> opt;
  opt.init(reg);
  live.grad()[0] = 1.0;
  live.grad()[1] = -1.0;
  opt.step(reg, 0.1);
  CHECK(live.values()[0] != 1.0);
  CHECK(frozen.values()[0] == 1.0);
  CHECK(frozen.values()[1] == 1.0);
}

TEST_CASE("ema follows the scalar recurrence and swaps exactly") {
  ParamRegistry<float> reg;
  Tensor<float> p = Tensor<float>::full({3}, 1.0f);
  reg.add("p", p);
  Ema<float> ema;
  ema.decay = 0.125;  // large decay so drift is visible
  ema.init(reg);

  double shadow = 1.0;
  for (int t = 0; t < 10; ++t) {
    float newval = 1.0f + 0.1f * float(t + 1);
    for (auto& v : p.values()) v = newval;
    ema.update(reg);
    shadow = (1.0 - 0.125) * shadow + 0.125 * double(newval);
    CHECK(double(ema.shadow[0][0]) == doctest::Approx(shadow).epsilon(1e-7));
  }

  SUBCASE("apply swaps shadow in, restore is the exact inverse") {
    std::vector<float> before(p.values().begin(), p.values().end());
    ema.apply(reg);
    CHECK(p.values()[0] == ema.shadow[0][0]);
    CHECK(p.values()[0] != before[0]);
    ema.restore(reg);
    for (size_t k = 0; k < before.size(); ++k)
      CHECK(p.values()[k] == before[k]);
  }
  SUBCASE("apply twice without restore is a contract error") {
    ema.apply(reg);
    CHECK_THROWS_AS(ema.apply(reg), ContractError);
    ema.restore(reg);
    CHECK_THROWS_AS(ema.restore(reg), ContractError);
  }
  SUBCASE("constant params are an exact fixed point") {
    ema.init(reg);  // shadow == params
    std::vector<float> start(p.values().begin(), p.values().end());
    for (int t = 0; t < 50; ++t) ema.update(reg);
    for (size_t k = 0; k < start.size(); ++k)
      CHECK(ema.shadow[0][k] == start[k]);
  }
}

TEST_CASE("batches stack samples into image and plane tensors") {
  DmatConfig cfg = tiny_config();
  auto data = tiny_dataset(cfg, 2);
  Batch<float> b = make_batch<float>({&data[0], &data[1]});
  CHECK(b.img.shape() == Shape{2, 3, 32, 32});
  CHECK(b.amodal.shape() == Shape{2, 1, 32, 32});
  // spot-check alignment against the source sample
  CHECK(b.img.at({1, 0, 5, 7}) == data[1].occluded.at({0, 5, 7}));
  CHECK(b.gt.at({0, 2, 9, 3}) == data[0].clean.at({2, 9, 3}));
  CHECK(b.inv.at({1, 0, 4, 4}) == float(data[1].masks.invisible.at(4, 4)));
  // vis is the complement of inv everywhere
  for (int64_t y = 0; y < 32; ++y)
    for (int64_t x = 0; x < 32; ++x)
      REQUIRE(b.vis.at({0, 0, y, x}) + b.inv.at({0, 0, y, x}) == 1.0f);
}

TEST_CASE("two trainers with the same seed walk bitwise identical paths") {
  DmatConfig cfg = tiny_config();
  auto data = tiny_dataset(cfg, 4);
  Trainer<float> a(cfg), b(cfg);
  REQUIRE(params_equal(a.gparams, b.gparams));
  for (int t = 0; t < 2; ++t) {
    StepMetrics ma = a.train_step(data);
    StepMetrics mb = b.train_step(data);
    CHECK(ma.total == mb.total);
    CHECK(ma.adv_d == mb.adv_d);
  }
  CHECK(params_equal(a.gparams, b.gparams));
  CHECK(params_equal(a.dparams, b.dparams));
}

TEST_CASE("discriminator stays frozen during the generator update") {
  DmatConfig cfg = tiny_config();
  auto data = tiny_dataset(cfg, 4);
  Trainer<float> tr(cfg);
  tr.train_step(data);
  // gen update ran last; its backward must leave disc grads exactly zero
  for (auto& [name, t] : tr.dparams.items) {
    CAPTURE(name);
    for (float g : t.grad_view()) REQUIRE(g == 0.0f);
  }
  // while the generator itself received signal
  double gmax = 0;
  for (auto& [_, t] : tr.gparams.items)
    for (float g : t.grad_view()) gmax = std::max(gmax, std::abs(double(g)));
  CHECK(gmax > 0.0);
  // and requires_grad was restored on the discriminator afterwards
  for (auto& [_, t] : tr.dparams.items) CHECK(t.requires_grad());
}

TEST_CASE("gan-off overfit on four samples collapses the loss") {
  DmatConfig cfg = tiny_config();
  cfg.w_adv = 0.0;
  cfg.w_disc = 0.0;
  auto data = tiny_dataset(cfg, 4);
  cfg.batch = 4;
  Trainer<float> tr(cfg);
  double first = 0, last = 0;
  for (int t = 0; t < 100; ++t) {
    StepMetrics m = tr.train_step(data);
    CHECK(m.adv_g == 0.0);
    CHECK(m.adv_d == 0.0);
    if (t == 0) first = m.total;
    last = m.total;
  }
  CAPTURE(first);
  CAPTURE(last);
  CHECK(last < 0.1 * first);
  // no parameter went non-finite on the way down
  for (auto& [_, t] : tr.gparams.items)
    for (float v : t.values()) REQUIRE(std::isfinite(v));
}

TEST_CASE("non-finite losses abort with iteration and component") {
  DmatConfig cfg = tiny_config();
  auto data = tiny_dataset(cfg, 2);
  Trainer<float> tr(cfg);
  tr.gparams.items[0].second.values()[0] =
      std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(tr.train_step(data),
                       doctest::Contains("iteration 0"), NumericError);
}

TEST_CASE("checkpoint container round trips bitwise") {
  Checkpoint c;
  c.iteration = 42;
  c.seed = 7;
  c.config_hash = 0xdeadbeefcafef00dull;
  c.gen_opt_steps = 42;
  c.disc_opt_steps = 40;
  c.arrays.push_back({"a.w", {2, 3}, {1.5f, -2.25f, 0.0f, 1e-30f, 3e30f,
                                      -0.125f}});
  c.arrays.push_back({"b", {1}, {42.0f}});
  save_checkpoint("ckpt_roundtrip.bin", c);
  Checkpoint d = load_checkpoint("ckpt_roundtrip.bin");
  CHECK(d.iteration == 42);
  CHECK(d.seed == 7);
  CHECK(d.config_hash == 0xdeadbeefcafef00dull);
  CHECK(d.gen_opt_steps == 42);
  CHECK(d.disc_opt_steps == 40);
  REQUIRE(d.arrays.size() == 2);
  CHECK(d.arrays[0].name == "a.w");
  CHECK(d.arrays[0].shape == std::vector<int64_t>{2, 3});
  for (size_t k = 0; k < 6; ++k)
    CHECK(d.arrays[0].data[k] == c.arrays[0].data[k]);
  CHECK(d.find("b") != nullptr);
  CHECK(d.find("missing") == nullptr);
  std::remove("ckpt_roundtrip.bin");

  CHECK_THROWS_AS(load_checkpoint("no_such_checkpoint.bin"), IoError);
}

TEST_CASE("corrupt checkpoint files are rejected") {
  {
    std::ofstream f("ckpt_bad.bin", std::ios::binary);
    f << "NOTACKPTxxxxxxxxxxxx";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint("ckpt_bad.bin"),
                       doctest::Contains("signature"), ValueError);
  Checkpoint c;
  c.arrays.push_back({"w", {4}, {1, 2, 3, 4}});
  save_checkpoint("ckpt_trunc.bin", c);
  {
    std::ifstream in("ckpt_trunc.bin", std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    std::ofstream out("ckpt_trunc.bin", std::ios::binary);
    out.write(all.data(), std::streamsize(all.size() - 6));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint("ckpt_trunc.bin"),
                       doctest::Contains("truncated"), ValueError);
  std::remove("ckpt_bad.bin");
  std::remove("ckpt_trunc.bin");
}

TEST_CASE("resume from a checkpoint replays the unbroken run bitwise") {
  DmatConfig cfg = tiny_config();
  auto data = tiny_dataset(cfg, 4);

  Trainer<float> unbroken(cfg);
  std::vector<StepMetrics> straight;
  for (int t = 0; t < 8; ++t) straight.push_back(unbroken.train_step(data));

  Trainer<float> part(cfg);
  for (int t = 0; t < 3; ++t) part.train_step(data);
  save_checkpoint("ckpt_resume.bin", part.snapshot());

  Trainer<float> resumed(cfg);
  resumed.restore(load_checkpoint("ckpt_resume.bin"));
  CHECK(resumed.iteration == 3);
  for (int t = 3; t < 8; ++t) {
    StepMetrics m = resumed.train_step(data);
    CHECK(m.iteration == straight[size_t(t)].iteration);
    CHECK(m.total == straight[size_t(t)].total);
    CHECK(m.adv_d == straight[size_t(t)].adv_d);
  }
  CHECK(params_equal(resumed.gparams, unbroken.gparams));
  CHECK(params_equal(resumed.dparams, unbroken.dparams));
  std::remove("ckpt_resume.bin");
}

TEST_CASE("restore refuses a checkpoint from a different config") {
  DmatConfig cfg = tiny_config();
  auto data = tiny_dataset(cfg, 2);
  Trainer<float> tr(cfg);
  Checkpoint c = tr.snapshot();
  c.config_hash ^= 1;
  CHECK_THROWS_WITH_AS(tr.restore(c), doctest::Contains("hash"), ValueError);
  // and a checkpoint with a missing array
  Checkpoint d = tr.snapshot();
  d.arrays.erase(d.arrays.begin());
  CHECK_THROWS_WITH_AS(tr.restore(d), doctest::Contains("missing"),
                       ValueError);
}

TEST_CASE("csv rows carry the pinned column order") {
  StepMetrics m;
  m.iteration = 12;
  m.lr = 0.01;
  m.l1 = 0.5;
  m.adv_g = 0.25;
  m.adv_d = 1.5;
  m.perc = 0.125;
  m.style = 2.0;
  m.total = 9.875;
  CHECK(std::string(kTrainCsvHeader) ==
        "iter,lr,l1,adv_g,adv_d,perc,style,total");
  CHECK(csv_row(m) == "12,0.01,0.5,0.25,1.5,0.125,2,9.875");
}

TEST_CASE("paper-scale generator and discriminator land near 12M params") {
  DmatConfig cfg;  // paper architecture widths
  cfg.image = 128; // grid >= 16 so every level uses its configured window
  Trainer<float> tr(cfg);
  int64_t total = tr.gparams.total_count() + tr.dparams.total_count();
  CHECK(total == 11623095);
  CHECK(double(total) > 0.85 * 12.02e6);
  CHECK(double(total) < 1.15 * 12.02e6);
}
