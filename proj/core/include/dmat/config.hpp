#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmat/generator.hpp"
#include "dmat/losses.hpp"
#include "dmat/synth.hpp"

namespace dmat {

// the single run configuration: architecture, losses, schedule, data, synth.
// Serialized as sectioned key = value text; unknown keys are hard errors.
struct DmatConfig {
  // [model]
  int64_t image = 64;
  bool ech_enabled = true;
  std::vector<int> ech_kernels{7, 7, 7};
  std::vector<int64_t> ech_channels{64, 128, 256};
  int64_t body_channels = 128;
  int body_heads = 4;
  std::vector<int> body_depths{2, 2, 6, 2, 2};
  std::vector<int> body_windows{8, 8, 4, 8, 8};
  std::string body_skip_mode = "add";
  bool dhmga_enabled = true;
  bool use_modal = true, use_inv = true, use_occ = true;
  double tau_inv = -100.0, tau_modal = 30.0, tau_occ = -100.0;
  bool alpha_trainable = true;
  double alpha_init = 1.0;
  bool ru_enabled = true;
  std::vector<int64_t> decoder_channels{256, 128, 6};

  // [loss]
  double w_l1 = 15.0, w_adv = 0.06, w_perc = 1.0, w_style = 150.0,
         w_disc = 0.6;
  bool amodal_loss = true;  // off: loss masks become all-ones (whole image)
  std::vector<int64_t> disc_channels{64, 128, 256, 512};
  uint64_t feature_seed = 1234;

  // [train]
  std::vector<int64_t> lr_boundaries{1000, 20000, 60000, 150000};
  std::vector<double> lrs{1e-2, 1e-3, 2e-4, 1e-4, 5e-5};
  int64_t max_iter = 5000;
  int64_t batch = 4;
  double ema_decay = 1e-5;
  bool eval_ema = false;
  int64_t checkpoint_every = 1000;
  uint64_t seed = 0;

  // [data]
  std::string train_dir = "data/train";
  std::string val_dir = "data/val";
  std::string out_dir = "out";

  // [synth]
  int64_t synth_count = 256;
  uint64_t synth_seed = 7;
  double synth_ratio_lo = 0.0, synth_ratio_hi = 0.5;
  int synth_bands = 5;

  void validate() const;
  GeneratorConfig generator_config() const;  // folds use_* into the taus
  SynthConfig synth_config() const;
  LossWeights loss_weights() const;
};

DmatConfig parse_config(const std::string& text);
DmatConfig load_config_file(const std::string& path);
// canonical form: fixed section/key order, shortest round-trip numerals
std::string serialize_config(const DmatConfig& cfg);
// FNV-1a 64 over the canonical serialization
uint64_t config_hash(const DmatConfig& cfg);

// named toggle sets mirroring the module/mask ablation rows; comma-separated
// lists apply left to right; unknown names are errors listing the valid set
void apply_ablation(DmatConfig& cfg, const std::string& names);

inline bool operator==(const DmatConfig& a, const DmatConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

}  // namespace dmat
