#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmat/tensor.hpp"

namespace dmat {

struct CheckpointArray {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> data;  // stored as little-endian 32-bit floats
};

// single-file training snapshot: a JSON header (iteration, seeds, config
// hash, optimizer step counts) followed by named raw arrays
struct Checkpoint {
  int64_t iteration = 0;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  int64_t gen_opt_steps = 0;
  int64_t disc_opt_steps = 0;
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dmat
