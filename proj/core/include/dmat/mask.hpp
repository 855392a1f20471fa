#pragma once

#include <cstdint>
#include <vector>

#include "dmat/tensor.hpp"

namespace dmat {

// binary plane, values strictly {0,1}
struct Mask {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int64_t h_, int64_t w_, uint8_t fill = 0)
      : h(h_), w(w_), v(size_t(h_ * w_), fill) {}

  uint8_t at(int64_t y, int64_t x) const { return v[size_t(y * w + x)]; }
  uint8_t& at(int64_t y, int64_t x) { return v[size_t(y * w + x)]; }
  int64_t numel() const { return h * w; }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t b : v) n += b;
    return n;
  }
};

Mask mask_and(const Mask& a, const Mask& b);
Mask mask_or(const Mask& a, const Mask& b);
Mask mask_not(const Mask& a);
// a AND NOT b
Mask mask_diff(const Mask& a, const Mask& b);
bool mask_subset(const Mask& a, const Mask& b);
bool mask_equal(const Mask& a, const Mask& b);

// throws ValueError naming the offending plane when values leave {0,1}
void validate_binary(const Mask& m, const char* name);

// modal: visible human; amodal: full human extent; invisible/visible/occlusion
// derived and validated so the algebraic relations hold by construction
struct MaskSet {
  Mask modal, amodal, invisible, visible, occlusion;
  int64_t h = 0, w = 0;
};

MaskSet build_mask_set(const Mask& modal, const Mask& amodal,
                       const Mask& occlusion);

enum class RegionLabel : uint8_t {
  Other = 0,
  VisibleHuman = 1,
  InvisibleHuman = 2,
  Occluder = 3,
};

struct RegionLabelMap {
  int64_t h = 0, w = 0;
  std::vector<RegionLabel> v;
  RegionLabel at(int64_t y, int64_t x) const { return v[size_t(y * w + x)]; }
};

RegionLabelMap label_regions(const MaskSet& ms);

enum class MaskResize {
  AnyValid,  // downsample: set if any source pixel in the block is set
  Majority,  // downsample: set if at least half the block is set
};

// integer-ratio resize only: target divides source (block reduce) or source
// divides target (block replicate); anything else throws ValueError
Mask resize_mask(const Mask& m, int64_t th, int64_t tw, MaskResize mode);

// same reduction applied to every plane; derived planes are rebuilt from the
// resized modal/amodal/occlusion so the set invariants still hold
MaskSet resize_mask_set(const MaskSet& ms, int64_t th, int64_t tw);

// window spill over the *complement*: a window containing at least one
// visible (inv=0) pixel becomes entirely visible. shifted offsets the window
// grid by window/2 with cyclic wrap, matching the attention shift.
Mask update_invisible_mask(const Mask& inv, int window, bool shifted);

template <typename T>
Tensor<T> mask_to_tensor(const Mask& m) {
  Tensor<T> t({m.h, m.w});
  for (int64_t i = 0; i < m.numel(); ++i) t.values()[size_t(i)] = T(m.v[size_t(i)]);
  return t;
}

// [1,1,h,w] plane for convolutional paths
template <typename T>
Tensor<T> mask_to_plane(const Mask& m) {
  Tensor<T> t({1, 1, m.h, m.w});
  for (int64_t i = 0; i < m.numel(); ++i) t.values()[size_t(i)] = T(m.v[size_t(i)]);
  return t;
}

template <typename T>
Mask tensor_to_mask(const Tensor<T>& t, T threshold = T(0.5)) {
  if (t.ndim() != 2) throw ShapeError("tensor_to_mask: expected [h,w]");
  Mask m(t.dim(0), t.dim(1));
  for (int64_t i = 0; i < t.numel(); ++i)
    m.v[size_t(i)] = t.values()[size_t(i)] > threshold ? 1 : 0;
  return m;
}

}  // namespace dmat
