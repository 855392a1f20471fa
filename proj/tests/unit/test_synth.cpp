#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dmat/image_io.hpp"
#include "dmat/synth.hpp"
#include "doctest.h"

using namespace dmat;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const char* stem) {
  auto d = fs::temp_directory_path() /
           (std::string("dmat_synth_") + stem + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("samples are bit-identical under a fixed (seed, index)") {
  SynthConfig cfg;
  cfg.count = 3;
  cfg.seed = 41;
  for (int64_t i = 0; i < 3; ++i) {
    Sample a = synth_sample(cfg, i), b = synth_sample(cfg, i);
    CHECK(a.id == b.id);
    CHECK(a.meta.occlusion_ratio == b.meta.occlusion_ratio);
    for (int64_t k = 0; k < a.clean.numel(); ++k) {
      CHECK(a.clean.values()[k] == b.clean.values()[k]);
      CHECK(a.occluded.values()[k] == b.occluded.values()[k]);
    }
    CHECK(mask_equal(a.masks.modal, b.masks.modal));
    CHECK(mask_equal(a.masks.amodal, b.masks.amodal));
    CHECK(mask_equal(a.masks.occlusion, b.masks.occlusion));
  }
  // different seed diverges
  SynthConfig other = cfg;
  other.seed = 42;
  Sample a = synth_sample(cfg, 0), c = synth_sample(other, 0);
  bool same = true;
  for (int64_t k = 0; k < a.clean.numel() && same; ++k)
    same = a.clean.values()[k] == c.clean.values()[k];
  CHECK_FALSE(same);
}

TEST_CASE("sample invariants: occluder extent, ratio accounting, mask algebra") {
  SynthConfig cfg;
  cfg.count = 10;
  cfg.seed = 7;
  for (int64_t i = 0; i < cfg.count; ++i) {
    Sample s = synth_sample(cfg, i);
    const auto& ms = s.masks;
    int64_t S = cfg.image;
    REQUIRE(s.clean.shape() == Shape{3, S, S});

    // occluder overwrites only its own extent
    for (int c = 0; c < 3; ++c)
      for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x)
          if (!ms.occlusion.at(y, x))
            CHECK(s.occluded.at({c, y, x}) == s.clean.at({c, y, x}));

    // declared ratio equals the mask accounting
    double recount =
        double(ms.invisible.count()) / double(ms.amodal.count());
    CHECK(std::fabs(s.meta.occlusion_ratio - recount) < 1e-6);
    auto [blo, bhi] = cfg.band_for(i);
    CHECK(s.meta.occlusion_ratio >= blo);
    CHECK(s.meta.occlusion_ratio <= bhi);

    // mask-set relations
    CHECK(mask_subset(ms.modal, ms.amodal));
    CHECK(mask_equal(ms.invisible, mask_diff(ms.amodal, ms.modal)));
    CHECK(mask_equal(ms.visible, mask_not(ms.invisible)));
    CHECK(mask_and(ms.modal, ms.invisible).count() == 0);
    CHECK(mask_equal(ms.invisible, mask_and(ms.amodal, ms.occlusion)));

    // figure occupies a sane fraction of the frame
    double frac = double(ms.amodal.count()) / double(S * S);
    CHECK(frac > 0.03);
    CHECK(frac < 0.6);
  }
}

TEST_CASE("band cycling covers every requested sub-band") {
  SynthConfig cfg;
  cfg.count = 20;
  cfg.seed = 11;
  cfg.bands = 5;
  std::vector<int> per_band(5, 0);
  for (int64_t i = 0; i < cfg.count; ++i) {
    Sample s = synth_sample(cfg, i);
    auto [blo, bhi] = cfg.band_for(i);
    CHECK(s.meta.occlusion_ratio >= blo);
    CHECK(s.meta.occlusion_ratio <= bhi);
    ++per_band[i % 5];
  }
  for (int b = 0; b < 5; ++b) CHECK(per_band[b] == 4);
}

TEST_CASE("zero ratio band: no invisible pixels, figure untouched") {
  SynthConfig cfg;
  cfg.count = 4;
  cfg.seed = 13;
  cfg.ratio_lo = cfg.ratio_hi = 0.0;
  for (int64_t i = 0; i < cfg.count; ++i) {
    Sample s = synth_sample(cfg, i);
    CHECK(s.masks.invisible.count() == 0);
    CHECK(s.meta.occlusion_ratio == 0.0);
    for (int c = 0; c < 3; ++c)
      for (int64_t y = 0; y < cfg.image; ++y)
        for (int64_t x = 0; x < cfg.image; ++x)
          if (s.masks.amodal.at(y, x))
            CHECK(s.occluded.at({c, y, x}) == s.clean.at({c, y, x}));
  }
}

TEST_CASE("palette separation respects the configured channel distance") {
  SynthConfig cfg;
  cfg.count = 6;
  cfg.seed = 17;
  auto dist = [](const Color& a, const Color& b) {
    double d = 0;
    for (int c = 0; c < 3; ++c)
      d = std::max(d, std::fabs(double(a[c]) - double(b[c])));
    return d;
  };
  for (int64_t i = 0; i < cfg.count; ++i) {
    Sample s = synth_sample(cfg, i);
    REQUIRE(s.meta.has_palette);
    const auto& m = s.meta;
    CHECK(dist(m.torso_color, m.bg_color) >= cfg.min_color_dist);
    CHECK(dist(m.limb_color, m.bg_color) >= cfg.min_color_dist);
    CHECK(dist(m.torso_color, m.occluder_color) >= cfg.min_color_dist);
    CHECK(dist(m.limb_color, m.occluder_color) >= cfg.min_color_dist);
    CHECK(dist(m.occluder_color, m.bg_color) >= cfg.min_color_dist);
  }
}

TEST_CASE("unattainable band fails naming the band; bad index rejected") {
  SynthConfig cfg;
  cfg.count = 1;
  cfg.seed = 3;
  // no rational |inv|/|amodal| can hit a degenerate band at an irrational point
  cfg.ratio_lo = cfg.ratio_hi = 0.3141592653589793;
  cfg.max_attempts = 50;
  CHECK_THROWS_WITH_AS(synth_sample(cfg, 0), doctest::Contains("unattainable"),
                       ValueError&);
  CHECK_THROWS_WITH_AS(synth_sample(cfg, 0), doctest::Contains("0.314"),
                       ValueError&);

  SynthConfig ok;
  ok.count = 2;
  CHECK_THROWS_AS(synth_sample(ok, 2), ValueError);
  CHECK_THROWS_AS(synth_sample(ok, -1), ValueError);
}

TEST_CASE("export produces bit-identical reruns and a faithful manifest") {
  SynthConfig cfg;
  cfg.count = 6;
  cfg.seed = 23;
  auto d1 = fresh_dir("exp1"), d2 = fresh_dir("exp2");
  synth_export(cfg, d1);
  synth_export(cfg, d2);
  int files = 0;
  for (const auto& ent : fs::directory_iterator(d1)) {
    auto name = ent.path().filename();
    CHECK(slurp(ent.path()) == slurp(fs::path(d2) / name));
    ++files;
  }
  CHECK(files == 6 * 5 + 1);
  fs::remove_all(d2);

  // manifest ratios agree with a per-sample regeneration
  for (int64_t i = 0; i < cfg.count; ++i) {
    Sample s = synth_sample(cfg, i);
    auto loaded = load_directory(d1);
    REQUIRE(loaded.size() == size_t(cfg.count));
    CHECK(loaded[size_t(i)].meta.occlusion_ratio == s.meta.occlusion_ratio);
    break;  // one regeneration suffices; the loader covers the rest below
  }
  fs::remove_all(d1);
}

TEST_CASE("export then load round-trips within quantization") {
  SynthConfig cfg;
  cfg.count = 5;
  cfg.seed = 29;
  auto dir = fresh_dir("rt");
  synth_export(cfg, dir);
  auto loaded = load_directory(dir);
  REQUIRE(loaded.size() == 5);
  for (int64_t i = 0; i < 5; ++i) {
    Sample ref = synth_sample(cfg, i);
    const Sample& got = loaded[size_t(i)];
    CHECK(got.id == ref.id);
    CHECK(mask_equal(got.masks.modal, ref.masks.modal));
    CHECK(mask_equal(got.masks.amodal, ref.masks.amodal));
    CHECK(mask_equal(got.masks.occlusion, ref.masks.occlusion));
    CHECK(mask_equal(got.masks.invisible, ref.masks.invisible));
    double worst = 0;
    for (int64_t k = 0; k < ref.clean.numel(); ++k) {
      worst = std::max(worst, std::fabs(double(got.clean.values()[k]) -
                                        double(ref.clean.values()[k])));
      worst = std::max(worst, std::fabs(double(got.occluded.values()[k]) -
                                        double(ref.occluded.values()[k])));
    }
    CHECK(worst <= 0.5 / 127.5 + 1e-6);
    REQUIRE(got.meta.has_palette);
    CHECK(got.meta.occlusion_ratio == ref.meta.occlusion_ratio);
    for (int c = 0; c < 3; ++c) {
      CHECK(got.meta.bg_color[c] == ref.meta.bg_color[c]);
      CHECK(got.meta.torso_color[c] == ref.meta.torso_color[c]);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("loader skips incomplete groups and rejects inconsistent masks") {
  SynthConfig cfg;
  cfg.count = 4;
  cfg.seed = 31;
  auto dir = fresh_dir("bad");
  synth_export(cfg, dir);

  fs::remove(fs::path(dir) / "000002_amodal.png");
  auto loaded = load_directory(dir);
  REQUIRE(loaded.size() == 3);
  for (const auto& s : loaded) CHECK(s.id != "000002");

  // craft a sample whose modal exceeds its amodal
  Mask all(16, 16, 1), none(16, 16, 0);
  Tensor<float> img({3, 16, 16});
  write_png(fs::path(dir) / "zzbad_img.png", tensor_to_image(img));
  write_png(fs::path(dir) / "zzbad_gt.png", tensor_to_image(img));
  write_mask_png(fs::path(dir) / "zzbad_modal.png", all);
  write_mask_png(fs::path(dir) / "zzbad_amodal.png", none);
  write_mask_png(fs::path(dir) / "zzbad_occ.png", none);
  auto again = load_directory(dir);
  CHECK(again.size() == 3);  // rejected, not loaded

  fs::remove_all(dir);
  auto empty = fresh_dir("empty");
  CHECK(load_directory(empty).empty());
  fs::remove_all(empty);
  CHECK_THROWS_AS(load_directory("/no_such_dir_dmat"), IoError);
}
