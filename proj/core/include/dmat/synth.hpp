#pragma once

#include <array>
#include <string>
#include <vector>

#include "dmat/mask.hpp"
#include "dmat/tensor.hpp"

namespace dmat {

using Color = std::array<float, 3>;  // rgb in [-1,1]

struct SampleMeta {
  uint64_t seed = 0;
  int64_t index = 0;
  double occlusion_ratio = 0.0;  // |M_inv| / |M_amodal|
  Color bg_color{}, torso_color{}, limb_color{}, occluder_color{};
  bool has_palette = false;  // false for externally loaded data
};

struct Sample {
  std::string id;
  Tensor<float> clean;     // [3,S,S], figure over background, no occluder
  Tensor<float> occluded;  // clean with the occluder painted over M_occ
  MaskSet masks;
  SampleMeta meta;
};

struct SynthConfig {
  int64_t image = 64;  // square, must suit the consuming model (not checked here)
  int64_t count = 16;
  uint64_t seed = 0;
  double ratio_lo = 0.0, ratio_hi = 0.5;  // occlusion-ratio range
  int bands = 5;              // sub-bands cycled over indices for coverage
  double min_color_dist = 0.5;  // max-channel palette separation
  int max_attempts = 500;

  void validate() const;
  // inclusive target band for a sample index
  std::pair<double, double> band_for(int64_t index) const;
};

// deterministic in (cfg.seed, index); throws ValueError when the target band
// is unattainable within cfg.max_attempts placements
Sample synth_sample(const SynthConfig& cfg, int64_t index);

// writes {id}_img/gt/modal/amodal/occ.png per sample plus manifest.json
void synth_export(const SynthConfig& cfg, const std::string& dir);

// loads samples in lexicographic id order; incomplete file groups are skipped
// and invariant-violating samples rejected, both with a stderr warning
std::vector<Sample> load_directory(const std::string& dir);

}  // namespace dmat
