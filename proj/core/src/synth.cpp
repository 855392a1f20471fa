#include "dmat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "dmat/image_io.hpp"
#include "dmat/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dmat {

void SynthConfig::validate() const {
  if (image < 16) throw ValueError("synth: image size must be >= 16");
  if (count < 0) throw ValueError("synth: count must be >= 0");
  if (!(ratio_lo >= 0.0 && ratio_lo <= ratio_hi && ratio_hi <= 1.0))
    throw ValueError("synth: ratio range must satisfy 0 <= lo <= hi <= 1");
  if (bands < 1) throw ValueError("synth: bands must be >= 1");
  if (max_attempts < 1) throw ValueError("synth: max_attempts must be >= 1");
  if (!(min_color_dist > 0.0 && min_color_dist < 1.8))
    throw ValueError("synth: min_color_dist must lie in (0, 1.8)");
}

std::pair<double, double> SynthConfig::band_for(int64_t index) const {
  if (ratio_hi <= ratio_lo) return {ratio_lo, ratio_hi};
  int b = int(index % bands);
  double step = (ratio_hi - ratio_lo) / bands;
  return {ratio_lo + step * b, ratio_lo + step * (b + 1)};
}

namespace {

struct Capsule {
  double x0, y0, x1, y1, r;
  int tone;  // 0 torso/head, 1 limb
};

bool capsule_hit(const Capsule& c, double px, double py) {
  double dx = c.x1 - c.x0, dy = c.y1 - c.y0;
  double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - c.x0) * dx + (py - c.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double qx = c.x0 + t * dx - px, qy = c.y0 + t * dy - py;
  return qx * qx + qy * qy <= c.r * c.r;
}

double max_channel_dist(const Color& a, const Color& b) {
  double d = 0;
  for (int c = 0; c < 3; ++c)
    d = std::max(d, std::fabs(double(a[c]) - double(b[c])));
  return d;
}

Color draw_color(Rng& rng) {
  return {float(rng.uniform(-0.9, 0.9)), float(rng.uniform(-0.9, 0.9)),
          float(rng.uniform(-0.9, 0.9))};
}

struct Occluder {
  bool ellipse;
  double cx, cy, ax, ay;  // center and half-extents

  bool hit(double px, double py) const {
    double nx = (px - cx) / ax, ny = (py - cy) / ay;
    return ellipse ? nx * nx + ny * ny <= 1.0
                   : std::fabs(nx) <= 1.0 && std::fabs(ny) <= 1.0;
  }
};

}  // namespace

Sample synth_sample(const SynthConfig& cfg, int64_t index) {
  cfg.validate();
  if (index < 0 || index >= cfg.count)
    throw ValueError("synth: index " + std::to_string(index) +
                     " outside count " + std::to_string(cfg.count));
  const int64_t S = cfg.image;
  Rng rng = Rng::derive(cfg.seed, uint64_t(index));

  // palette: figure tones separated from background base and occluder
  Color bg = draw_color(rng), torso{}, limb{}, occl{};
  for (int tries = 0;; ++tries) {
    if (tries > 1000)
      throw ContractError("synth: palette separation unattainable");
    torso = draw_color(rng);
    limb = draw_color(rng);
    occl = draw_color(rng);
    double d = cfg.min_color_dist;
    if (max_channel_dist(torso, bg) >= d && max_channel_dist(limb, bg) >= d &&
        max_channel_dist(torso, occl) >= d &&
        max_channel_dist(limb, occl) >= d &&
        max_channel_dist(occl, bg) >= d &&
        max_channel_dist(torso, limb) >= d * 0.5)
      break;
  }

  // articulated figure: torso capsule, head, two arms, two legs
  std::vector<Capsule> parts;
  double cx = S * (0.5 + rng.uniform(-0.08, 0.08));
  double cy = S * (0.5 + rng.uniform(-0.05, 0.05));
  double th = rng.uniform(-0.3, 0.3);  // lean off vertical
  double dirx = std::sin(th), diry = std::cos(th);
  double half_t = S * rng.uniform(0.16, 0.20);
  double r_t = S * rng.uniform(0.07, 0.09);
  double topx = cx - half_t * dirx, topy = cy - half_t * diry;
  double botx = cx + half_t * dirx, boty = cy + half_t * diry;
  parts.push_back({topx, topy, botx, boty, r_t, 0});
  double r_h = S * rng.uniform(0.06, 0.08);
  double hx = topx - 0.8 * r_h * dirx, hy = topy - 0.8 * r_h * diry;
  parts.push_back({hx, hy, hx, hy, r_h, 0});
  for (int side = -1; side <= 1; side += 2) {  // arms
    double a = th + side * (1.5707963 + rng.uniform(-0.6, 0.6));
    double len = S * rng.uniform(0.14, 0.18), r = S * rng.uniform(0.030, 0.042);
    double sx = topx + 0.15 * half_t * dirx, sy = topy + 0.15 * half_t * diry;
    parts.push_back({sx, sy, sx + len * std::sin(a), sy + len * std::cos(a), r, 1});
  }
  for (int side = -1; side <= 1; side += 2) {  // legs
    double a = th + side * rng.uniform(0.15, 0.55);
    double len = S * rng.uniform(0.16, 0.22), r = S * rng.uniform(0.035, 0.048);
    parts.push_back({botx, boty, botx + len * std::sin(a),
                     boty + len * std::cos(a), r, 1});
  }

  Mask amodal(S, S);
  std::vector<int8_t> tone(size_t(S * S), -1);
  std::vector<std::pair<int64_t, int64_t>> amodal_px;
  for (int64_t y = 0; y < S; ++y)
    for (int64_t x = 0; x < S; ++x) {
      double px = x + 0.5, py = y + 0.5;
      for (const auto& c : parts)
        if (capsule_hit(c, px, py)) {
          amodal.at(y, x) = 1;
          tone[size_t(y * S + x)] = int8_t(c.tone);  // later parts win
        }
      if (amodal.at(y, x)) amodal_px.emplace_back(y, x);
    }
  if (amodal_px.empty())
    throw ContractError("synth: figure rasterized to zero pixels");

  // occluder placement by rejection into the target ratio band
  auto [blo, bhi] = cfg.band_for(index);
  double target = 0.5 * (blo + bhi);
  Mask occ(S, S);
  double ratio = 0.0;
  bool placed = false;
  for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
    Occluder o;
    o.ellipse = rng.bernoulli(0.5);
    if (target <= 0.0) {
      o.ax = S * rng.uniform(0.06, 0.14);
      o.ay = S * rng.uniform(0.06, 0.14);
      o.cx = rng.uniform(0.0, double(S));
      o.cy = rng.uniform(0.0, double(S));
    } else {
      o.ax = S * rng.uniform(0.10, 0.32);
      o.ay = S * rng.uniform(0.10, 0.32);
      auto [ay_, ax_] = amodal_px[rng.uniform_int(amodal_px.size())];
      o.cx = ax_ + 0.5 + rng.normal(0.0, 0.25 * S);
      o.cy = ay_ + 0.5 + rng.normal(0.0, 0.25 * S);
    }
    Mask cand(S, S);
    int64_t inv_count = 0;
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x)
        if (o.hit(x + 0.5, y + 0.5)) {
          cand.at(y, x) = 1;
          inv_count += amodal.at(y, x);
        }
    double r = double(inv_count) / double(amodal_px.size());
    if (r >= blo && r <= bhi) {
      occ = cand;
      ratio = r;
      placed = true;
    }
  }
  if (!placed) {
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "synth: sample %lld: occlusion band [%.3f, %.3f] unattainable "
                  "after %d attempts",
                  (long long)index, blo, bhi, cfg.max_attempts);
    throw ValueError(buf);
  }

  Mask modal = mask_diff(amodal, occ);
  Sample s;
  char idbuf[16];
  std::snprintf(idbuf, sizeof(idbuf), "%06lld", (long long)index);
  s.id = idbuf;
  s.masks = build_mask_set(modal, amodal, occ);
  s.meta.seed = cfg.seed;
  s.meta.index = index;
  s.meta.occlusion_ratio = ratio;
  s.meta.bg_color = bg;
  s.meta.torso_color = torso;
  s.meta.limb_color = limb;
  s.meta.occluder_color = occl;
  s.meta.has_palette = true;

  // clean: sinusoid-textured background under the flat two-tone figure
  double amp = 0.12;
  double fx = rng.uniform(0.5, 3.0), fy = rng.uniform(0.5, 3.0);
  double phase[3] = {rng.uniform(0.0, 6.2831853), rng.uniform(0.0, 6.2831853),
                     rng.uniform(0.0, 6.2831853)};
  s.clean = Tensor<float>({3, S, S});
  for (int c = 0; c < 3; ++c) {
    Color fig[2] = {torso, limb};
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x) {
        double v;
        int8_t t = tone[size_t(y * S + x)];
        if (t >= 0) {
          v = fig[t][c];
        } else {
          v = bg[c] + amp * std::sin(6.2831853 * (fx * x + fy * y) / double(S) +
                                     phase[c]);
        }
        s.clean.at({c, y, x}) = float(v);
      }
  }
  s.occluded = s.clean.clone();
  for (int c = 0; c < 3; ++c)
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x)
        if (occ.at(y, x)) s.occluded.at({c, y, x}) = occl[c];
  return s;
}

namespace {
json color_json(const Color& c) { return json{c[0], c[1], c[2]}; }

Color color_from_json(const json& j) {
  return {j.at(0).get<float>(), j.at(1).get<float>(), j.at(2).get<float>()};
}
}  // namespace

void synth_export(const SynthConfig& cfg, const std::string& dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError("synth_export: cannot create directory " + dir);
  json manifest;
  manifest["image"] = cfg.image;
  manifest["count"] = cfg.count;
  manifest["seed"] = cfg.seed;
  manifest["samples"] = json::array();
  for (int64_t i = 0; i < cfg.count; ++i) {
    Sample s = synth_sample(cfg, i);
    auto base = fs::path(dir) / s.id;
    write_png(base.string() + "_img.png", tensor_to_image(s.occluded));
    write_png(base.string() + "_gt.png", tensor_to_image(s.clean));
    write_mask_png(base.string() + "_modal.png", s.masks.modal);
    write_mask_png(base.string() + "_amodal.png", s.masks.amodal);
    write_mask_png(base.string() + "_occ.png", s.masks.occlusion);
    json e;
    e["id"] = s.id;
    e["seed"] = s.meta.seed;
    e["index"] = s.meta.index;
    e["ratio"] = s.meta.occlusion_ratio;
    e["bg"] = color_json(s.meta.bg_color);
    e["torso"] = color_json(s.meta.torso_color);
    e["limb"] = color_json(s.meta.limb_color);
    e["occluder"] = color_json(s.meta.occluder_color);
    manifest["samples"].push_back(e);
  }
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("synth_export: cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

std::vector<Sample> load_directory(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw IoError("load_directory: not a directory: " + dir);

  std::map<std::string, json> meta_by_id;
  auto mpath = fs::path(dir) / "manifest.json";
  if (fs::exists(mpath)) {
    std::ifstream f(mpath);
    json manifest = json::parse(f, nullptr, true);
    for (const auto& e : manifest.at("samples"))
      meta_by_id[e.at("id").get<std::string>()] = e;
  }

  std::vector<std::string> ids;
  const std::string tag = "_img.png";
  for (const auto& ent : fs::directory_iterator(dir)) {
    std::string name = ent.path().filename().string();
    if (name.size() > tag.size() &&
        name.compare(name.size() - tag.size(), tag.size(), tag) == 0)
      ids.push_back(name.substr(0, name.size() - tag.size()));
  }
  std::sort(ids.begin(), ids.end());

  std::vector<Sample> out;
  for (const auto& id : ids) {
    auto base = (fs::path(dir) / id).string();
    const char* suffixes[] = {"_img.png", "_gt.png", "_modal.png",
                              "_amodal.png", "_occ.png"};
    bool complete = true;
    for (const char* sfx : suffixes)
      if (!fs::exists(base + sfx)) {
        std::fprintf(stderr, "load_directory: %s: missing %s, skipped\n",
                     id.c_str(), sfx);
        complete = false;
      }
    if (!complete) continue;
    try {
      Sample s;
      s.id = id;
      s.occluded = image_to_tensor<float>(read_png(base + "_img.png"));
      s.clean = image_to_tensor<float>(read_png(base + "_gt.png"));
      Mask modal = read_mask_png(base + "_modal.png");
      Mask amodal = read_mask_png(base + "_amodal.png");
      Mask occ = read_mask_png(base + "_occ.png");
      if (s.occluded.dim(0) != 3 || s.clean.shape() != s.occluded.shape() ||
          modal.h != s.occluded.dim(1) || modal.w != s.occluded.dim(2))
        throw ValueError("image and mask resolutions disagree");
      s.masks = build_mask_set(modal, amodal, occ);
      auto it = meta_by_id.find(id);
      if (it != meta_by_id.end()) {
        const json& e = it->second;
        s.meta.seed = e.at("seed").get<uint64_t>();
        s.meta.index = e.at("index").get<int64_t>();
        s.meta.occlusion_ratio = e.at("ratio").get<double>();
        s.meta.bg_color = color_from_json(e.at("bg"));
        s.meta.torso_color = color_from_json(e.at("torso"));
        s.meta.limb_color = color_from_json(e.at("limb"));
        s.meta.occluder_color = color_from_json(e.at("occluder"));
        s.meta.has_palette = true;
      } else {
        int64_t am = s.masks.amodal.count();
        s.meta.occlusion_ratio =
            am > 0 ? double(s.masks.invisible.count()) / double(am) : 0.0;
      }
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "load_directory: %s: rejected: %s\n", id.c_str(),
                   e.what());
    }
  }
  return out;
}

}  // namespace dmat
