#include "dmat/config.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace dmat {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v) {
  throw ValueError("config: bad value '" + v + "' for key '" + key + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v);
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

double parse_f64(const std::string& key, const std::string& v) {
  double out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

template <typename I>
std::vector<I> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<I> out;
  for (const auto& part : split(v, ',')) out.push_back(parse_int<I>(key, part));
  return out;
}

std::vector<double> parse_f64_list(const std::string& key,
                                   const std::string& v) {
  std::vector<double> out;
  for (const auto& part : split(v, ',')) out.push_back(parse_f64(key, part));
  return out;
}

std::string fmt_f64(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

template <typename I>
std::string fmt_int_list(const std::vector<I>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_f64_list(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_f64(v[i]);
  }
  return out;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

using Setter = std::function<void(DmatConfig&, const std::string&,
                                  const std::string&)>;
using SectionMap = std::map<std::string, std::map<std::string, Setter>>;

const SectionMap& setters() {
  static const SectionMap m = [] {
    SectionMap s;
    auto& model = s["model"];
    model["image"] = [](DmatConfig& c, const std::string& k,
                        const std::string& v) { c.image = parse_int<int64_t>(k, v); };
    model["ech_enabled"] = [](DmatConfig& c, const std::string& k,
                              const std::string& v) { c.ech_enabled = parse_bool(k, v); };
    model["ech_kernels"] = [](DmatConfig& c, const std::string& k,
                              const std::string& v) { c.ech_kernels = parse_int_list<int>(k, v); };
    model["ech_channels"] = [](DmatConfig& c, const std::string& k,
                               const std::string& v) { c.ech_channels = parse_int_list<int64_t>(k, v); };
    model["body_channels"] = [](DmatConfig& c, const std::string& k,
                                const std::string& v) { c.body_channels = parse_int<int64_t>(k, v); };
    model["body_heads"] = [](DmatConfig& c, const std::string& k,
                             const std::string& v) { c.body_heads = parse_int<int>(k, v); };
    model["body_depths"] = [](DmatConfig& c, const std::string& k,
                              const std::string& v) { c.body_depths = parse_int_list<int>(k, v); };
    model["body_windows"] = [](DmatConfig& c, const std::string& k,
                               const std::string& v) { c.body_windows = parse_int_list<int>(k, v); };
    model["body_skip_mode"] = [](DmatConfig& c, const std::string&,
                                 const std::string& v) { c.body_skip_mode = v; };
    model["dhmga_enabled"] = [](DmatConfig& c, const std::string& k,
                                const std::string& v) { c.dhmga_enabled = parse_bool(k, v); };
    model["use_modal"] = [](DmatConfig& c, const std::string& k,
                            const std::string& v) { c.use_modal = parse_bool(k, v); };
    model["use_inv"] = [](DmatConfig& c, const std::string& k,
                          const std::string& v) { c.use_inv = parse_bool(k, v); };
    model["use_occ"] = [](DmatConfig& c, const std::string& k,
                          const std::string& v) { c.use_occ = parse_bool(k, v); };
    model["tau_inv"] = [](DmatConfig& c, const std::string& k,
                          const std::string& v) { c.tau_inv = parse_f64(k, v); };
    model["tau_modal"] = [](DmatConfig& c, const std::string& k,
                            const std::string& v) { c.tau_modal = parse_f64(k, v); };
    model["tau_occ"] = [](DmatConfig& c, const std::string& k,
                          const std::string& v) { c.tau_occ = parse_f64(k, v); };
    model["alpha_trainable"] = [](DmatConfig& c, const std::string& k,
                                  const std::string& v) { c.alpha_trainable = parse_bool(k, v); };
    model["alpha_init"] = [](DmatConfig& c, const std::string& k,
                             const std::string& v) { c.alpha_init = parse_f64(k, v); };
    model["ru_enabled"] = [](DmatConfig& c, const std::string& k,
                             const std::string& v) { c.ru_enabled = parse_bool(k, v); };
    model["decoder_channels"] = [](DmatConfig& c, const std::string& k,
                                   const std::string& v) { c.decoder_channels = parse_int_list<int64_t>(k, v); };
    auto& loss = s["loss"];
    loss["w_l1"] = [](DmatConfig& c, const std::string& k,
                      const std::string& v) { c.w_l1 = parse_f64(k, v); };
    loss["w_adv"] = [](DmatConfig& c, const std::string& k,
                       const std::string& v) { c.w_adv = parse_f64(k, v); };
    loss["w_perc"] = [](DmatConfig& c, const std::string& k,
                        const std::string& v) { c.w_perc = parse_f64(k, v); };
    loss["w_style"] = [](DmatConfig& c, const std::string& k,
                         const std::string& v) { c.w_style = parse_f64(k, v); };
    loss["w_disc"] = [](DmatConfig& c, const std::string& k,
                        const std::string& v) { c.w_disc = parse_f64(k, v); };
    loss["amodal_loss"] = [](DmatConfig& c, const std::string& k,
                             const std::string& v) { c.amodal_loss = parse_bool(k, v); };
    loss["disc_channels"] = [](DmatConfig& c, const std::string& k,
                               const std::string& v) { c.disc_channels = parse_int_list<int64_t>(k, v); };
    loss["feature_seed"] = [](DmatConfig& c, const std::string& k,
                              const std::string& v) { c.feature_seed = parse_int<uint64_t>(k, v); };
    auto& train = s["train"];
    train["lr_boundaries"] = [](DmatConfig& c, const std::string& k,
                                const std::string& v) { c.lr_boundaries = parse_int_list<int64_t>(k, v); };
    train["lrs"] = [](DmatConfig& c, const std::string& k,
                      const std::string& v) { c.lrs = parse_f64_list(k, v); };
    train["max_iter"] = [](DmatConfig& c, const std::string& k,
                           const std::string& v) { c.max_iter = parse_int<int64_t>(k, v); };
    train["batch"] = [](DmatConfig& c, const std::string& k,
                        const std::string& v) { c.batch = parse_int<int64_t>(k, v); };
    train["ema_decay"] = [](DmatConfig& c, const std::string& k,
                            const std::string& v) { c.ema_decay = parse_f64(k, v); };
    train["eval_ema"] = [](DmatConfig& c, const std::string& k,
                           const std::string& v) { c.eval_ema = parse_bool(k, v); };
    train["checkpoint_every"] = [](DmatConfig& c, const std::string& k,
                                   const std::string& v) { c.checkpoint_every = parse_int<int64_t>(k, v); };
    train["seed"] = [](DmatConfig& c, const std::string& k,
                       const std::string& v) { c.seed = parse_int<uint64_t>(k, v); };
    auto& data = s["data"];
    data["train_dir"] = [](DmatConfig& c, const std::string&,
                           const std::string& v) { c.train_dir = v; };
    data["val_dir"] = [](DmatConfig& c, const std::string&,
                         const std::string& v) { c.val_dir = v; };
    data["out_dir"] = [](DmatConfig& c, const std::string&,
                         const std::string& v) { c.out_dir = v; };
    auto& synth = s["synth"];
    synth["count"] = [](DmatConfig& c, const std::string& k,
                        const std::string& v) { c.synth_count = parse_int<int64_t>(k, v); };
    synth["seed"] = [](DmatConfig& c, const std::string& k,
                       const std::string& v) { c.synth_seed = parse_int<uint64_t>(k, v); };
    synth["ratio_lo"] = [](DmatConfig& c, const std::string& k,
                           const std::string& v) { c.synth_ratio_lo = parse_f64(k, v); };
    synth["ratio_hi"] = [](DmatConfig& c, const std::string& k,
                           const std::string& v) { c.synth_ratio_hi = parse_f64(k, v); };
    synth["bands"] = [](DmatConfig& c, const std::string& k,
                        const std::string& v) { c.synth_bands = parse_int<int>(k, v); };
    return s;
  }();
  return m;
}

}  // namespace

DmatConfig parse_config(const std::string& text) {
  DmatConfig cfg;
  const auto& table = setters();
  std::string section;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ValueError("config: malformed section at line " +
                         std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      if (!table.count(section))
        throw ValueError("config: unknown section '" + section + "'");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValueError("config: expected key = value at line " +
                       std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ValueError("config: key '" + key + "' before any section");
    auto sit = table.find(section);
    auto kit = sit->second.find(key);
    if (kit == sit->second.end())
      throw ValueError("config: unknown key '" + key + "' in section [" +
                       section + "]");
    std::string full = section + "." + key;
    if (!seen.insert(full).second)
      throw ValueError("config: duplicate key '" + full + "'");
    kit->second(cfg, full, value);
  }
  return cfg;
}

DmatConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const DmatConfig& c) {
  std::string o;
  o += "[model]\n";
  o += "image = " + std::to_string(c.image) + "\n";
  o += "ech_enabled = " + fmt_bool(c.ech_enabled) + "\n";
  o += "ech_kernels = " + fmt_int_list(c.ech_kernels) + "\n";
  o += "ech_channels = " + fmt_int_list(c.ech_channels) + "\n";
  o += "body_channels = " + std::to_string(c.body_channels) + "\n";
  o += "body_heads = " + std::to_string(c.body_heads) + "\n";
  o += "body_depths = " + fmt_int_list(c.body_depths) + "\n";
  o += "body_windows = " + fmt_int_list(c.body_windows) + "\n";
  o += "body_skip_mode = " + c.body_skip_mode + "\n";
  o += "dhmga_enabled = " + fmt_bool(c.dhmga_enabled) + "\n";
  o += "use_modal = " + fmt_bool(c.use_modal) + "\n";
  o += "use_inv = " + fmt_bool(c.use_inv) + "\n";
  o += "use_occ = " + fmt_bool(c.use_occ) + "\n";
  o += "tau_inv = " + fmt_f64(c.tau_inv) + "\n";
  o += "tau_modal = " + fmt_f64(c.tau_modal) + "\n";
  o += "tau_occ = " + fmt_f64(c.tau_occ) + "\n";
  o += "alpha_trainable = " + fmt_bool(c.alpha_trainable) + "\n";
  o += "alpha_init = " + fmt_f64(c.alpha_init) + "\n";
  o += "ru_enabled = " + fmt_bool(c.ru_enabled) + "\n";
  o += "decoder_channels = " + fmt_int_list(c.decoder_channels) + "\n";
  o += "\n[loss]\n";
  o += "w_l1 = " + fmt_f64(c.w_l1) + "\n";
  o += "w_adv = " + fmt_f64(c.w_adv) + "\n";
  o += "w_perc = " + fmt_f64(c.w_perc) + "\n";
  o += "w_style = " + fmt_f64(c.w_style) + "\n";
  o += "w_disc = " + fmt_f64(c.w_disc) + "\n";
  o += "amodal_loss = " + fmt_bool(c.amodal_loss) + "\n";
  o += "disc_channels = " + fmt_int_list(c.disc_channels) + "\n";
  o += "feature_seed = " + std::to_string(c.feature_seed) + "\n";
  o += "\n[train]\n";
  o += "lr_boundaries = " + fmt_int_list(c.lr_boundaries) + "\n";
  o += "lrs = " + fmt_f64_list(c.lrs) + "\n";
  o += "max_iter = " + std::to_string(c.max_iter) + "\n";
  o += "batch = " + std::to_string(c.batch) + "\n";
  o += "ema_decay = " + fmt_f64(c.ema_decay) + "\n";
  o += "eval_ema = " + fmt_bool(c.eval_ema) + "\n";
  o += "checkpoint_every = " + std::to_string(c.checkpoint_every) + "\n";
  o += "seed = " + std::to_string(c.seed) + "\n";
  o += "\n[data]\n";
  o += "train_dir = " + c.train_dir + "\n";
  o += "val_dir = " + c.val_dir + "\n";
  o += "out_dir = " + c.out_dir + "\n";
  o += "\n[synth]\n";
  o += "count = " + std::to_string(c.synth_count) + "\n";
  o += "seed = " + std::to_string(c.synth_seed) + "\n";
  o += "ratio_lo = " + fmt_f64(c.synth_ratio_lo) + "\n";
  o += "ratio_hi = " + fmt_f64(c.synth_ratio_hi) + "\n";
  o += "bands = " + std::to_string(c.synth_bands) + "\n";
  return o;
}

uint64_t config_hash(const DmatConfig& cfg) {
  std::string s = serialize_config(cfg);
  uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void DmatConfig::validate() const {
  generator_config().validate();
  synth_config().validate();
  if (lrs.size() != lr_boundaries.size() + 1)
    throw ValueError("config: need exactly one more lr than boundaries");
  for (size_t i = 0; i + 1 < lr_boundaries.size(); ++i)
    if (lr_boundaries[i] >= lr_boundaries[i + 1])
      throw ValueError("config: lr_boundaries must increase strictly");
  for (double lr : lrs)
    if (!(lr > 0)) throw ValueError("config: lrs must be positive");
  if (batch < 1) throw ValueError("config: batch must be >= 1");
  if (max_iter < 0) throw ValueError("config: max_iter must be >= 0");
  if (checkpoint_every < 1)
    throw ValueError("config: checkpoint_every must be >= 1");
  if (!(ema_decay > 0.0 && ema_decay < 1.0))
    throw ValueError("config: ema_decay must lie in (0, 1)");
  for (double w : {w_l1, w_adv, w_perc, w_style, w_disc})
    if (w < 0) throw ValueError("config: loss weights must be >= 0");
  if (disc_channels.size() != 4)
    throw ValueError("config: disc_channels needs exactly 4 stages");
}

GeneratorConfig DmatConfig::generator_config() const {
  GeneratorConfig g;
  g.image_h = g.image_w = image;
  g.ech.enabled = ech_enabled;
  g.ech.kernels = ech_kernels;
  g.ech.channels = ech_channels;
  g.body.channels = body_channels;
  g.body.heads = body_heads;
  g.body.depths = body_depths;
  g.body.windows = body_windows;
  g.body.skip_mode = body_skip_mode;
  g.body.enabled = dhmga_enabled;
  g.body.taus.inv = use_inv ? tau_inv : 0.0;
  g.body.taus.modal = use_modal ? tau_modal : 0.0;
  g.body.taus.occ = use_occ ? tau_occ : 0.0;
  g.body.alpha_trainable = alpha_trainable;
  g.body.alpha_init = alpha_init;
  g.decoder.channels = decoder_channels;
  g.decoder.ru_enabled = ru_enabled;
  g.link();
  return g;
}

SynthConfig DmatConfig::synth_config() const {
  SynthConfig s;
  s.image = image;
  s.count = synth_count;
  s.seed = synth_seed;
  s.ratio_lo = synth_ratio_lo;
  s.ratio_hi = synth_ratio_hi;
  s.bands = synth_bands;
  return s;
}

LossWeights DmatConfig::loss_weights() const {
  LossWeights w;
  w.l1 = w_l1;
  w.adv = w_adv;
  w.perc = w_perc;
  w.style = w_style;
  w.disc = w_disc;
  return w;
}

void apply_ablation(DmatConfig& cfg, const std::string& names) {
  for (const auto& name : split(names, ',')) {
    if (name.empty()) continue;
    if (name == "no-ech") {
      cfg.ech_enabled = false;
    } else if (name == "no-dhmga") {
      cfg.alpha_trainable = false;
      cfg.alpha_init = 0.0;
      cfg.tau_inv = cfg.tau_modal = cfg.tau_occ = 0.0;
    } else if (name == "no-ru") {
      cfg.ru_enabled = false;
    } else if (name == "no-al") {
      cfg.amodal_loss = false;
    } else if (name == "no-modal-bias") {
      cfg.use_modal = false;
    } else if (name == "no-inv-bias") {
      cfg.use_inv = false;
    } else if (name == "no-occ-bias") {
      cfg.use_occ = false;
    } else if (name == "k222") {
      cfg.ech_kernels = {2, 2, 2};
    } else {
      throw ValueError(
          "config: unknown ablation '" + name +
          "' (valid: no-ech, no-dhmga, no-ru, no-al, no-modal-bias, "
          "no-inv-bias, no-occ-bias, k222)");
    }
  }
}

}  // namespace dmat
