#include "dmat/mask.hpp"

#include <string>

namespace dmat {

namespace {

void check_same_size(const Mask& a, const Mask& b, const char* op) {
  if (a.h != b.h || a.w != b.w)
    throw ShapeError(std::string(op) + ": mask sizes " + std::to_string(a.h) +
                     "x" + std::to_string(a.w) + " and " + std::to_string(b.h) +
                     "x" + std::to_string(b.w) + " differ");
}

}  // namespace

Mask mask_and(const Mask& a, const Mask& b) {
  check_same_size(a, b, "mask_and");
  Mask out(a.h, a.w);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] & b.v[i];
  return out;
}

Mask mask_or(const Mask& a, const Mask& b) {
  check_same_size(a, b, "mask_or");
  Mask out(a.h, a.w);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] | b.v[i];
  return out;
}

Mask mask_not(const Mask& a) {
  Mask out(a.h, a.w);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] ? 0 : 1;
  return out;
}

Mask mask_diff(const Mask& a, const Mask& b) {
  check_same_size(a, b, "mask_diff");
  Mask out(a.h, a.w);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] & (b.v[i] ? 0 : 1);
  return out;
}

bool mask_subset(const Mask& a, const Mask& b) {
  check_same_size(a, b, "mask_subset");
  for (size_t i = 0; i < a.v.size(); ++i)
    if (a.v[i] && !b.v[i]) return false;
  return true;
}

bool mask_equal(const Mask& a, const Mask& b) {
  if (a.h != b.h || a.w != b.w) return false;
  return a.v == b.v;
}

void validate_binary(const Mask& m, const char* name) {
  for (uint8_t b : m.v)
    if (b > 1)
      throw ValueError(std::string("mask '") + name +
                       "' contains value " + std::to_string(int(b)) +
                       ", expected strictly {0,1}");
}

MaskSet build_mask_set(const Mask& modal, const Mask& amodal,
                       const Mask& occlusion) {
  check_same_size(modal, amodal, "build_mask_set");
  check_same_size(modal, occlusion, "build_mask_set");
  validate_binary(modal, "modal");
  validate_binary(amodal, "amodal");
  validate_binary(occlusion, "occlusion");
  if (!mask_subset(modal, amodal))
    throw ValueError(
        "build_mask_set: modal mask is not a subset of the amodal mask");
  MaskSet ms;
  ms.h = modal.h;
  ms.w = modal.w;
  ms.modal = modal;
  ms.amodal = amodal;
  ms.occlusion = occlusion;
  ms.invisible = mask_diff(amodal, modal);
  ms.visible = mask_not(ms.invisible);
  return ms;
}

RegionLabelMap label_regions(const MaskSet& ms) {
  RegionLabelMap lm;
  lm.h = ms.h;
  lm.w = ms.w;
  lm.v.resize(size_t(ms.h * ms.w), RegionLabel::Other);
  for (size_t i = 0; i < lm.v.size(); ++i) {
    if (ms.modal.v[i]) lm.v[i] = RegionLabel::VisibleHuman;
    else if (ms.invisible.v[i]) lm.v[i] = RegionLabel::InvisibleHuman;
    else if (ms.occlusion.v[i]) lm.v[i] = RegionLabel::Occluder;
  }
  return lm;
}

Mask resize_mask(const Mask& m, int64_t th, int64_t tw, MaskResize mode) {
  if (th < 1 || tw < 1)
    throw ValueError("resize_mask: target size must be positive");
  if (th == m.h && tw == m.w) return m;
  bool down = th <= m.h;
  if (down != (tw <= m.w) || (down && (m.h % th || m.w % tw)) ||
      (!down && (th % m.h || tw % m.w)))
    throw ValueError("resize_mask: " + std::to_string(m.h) + "x" +
                     std::to_string(m.w) + " -> " + std::to_string(th) + "x" +
                     std::to_string(tw) +
                     " is not an integer block ratio on both axes");
  Mask out(th, tw);
  if (down) {
    int64_t ry = m.h / th, rx = m.w / tw;
    for (int64_t y = 0; y < th; ++y)
      for (int64_t x = 0; x < tw; ++x) {
        int64_t ones = 0;
        for (int64_t dy = 0; dy < ry; ++dy)
          for (int64_t dx = 0; dx < rx; ++dx)
            ones += m.at(y * ry + dy, x * rx + dx);
        out.at(y, x) = mode == MaskResize::AnyValid
                           ? (ones > 0 ? 1 : 0)
                           : (ones * 2 >= ry * rx ? 1 : 0);
      }
  } else {
    int64_t ry = th / m.h, rx = tw / m.w;
    for (int64_t y = 0; y < th; ++y)
      for (int64_t x = 0; x < tw; ++x) out.at(y, x) = m.at(y / ry, x / rx);
  }
  return out;
}

MaskSet resize_mask_set(const MaskSet& ms, int64_t th, int64_t tw) {
  // AnyValid on modal/amodal preserves modal ⊆ amodal (pointwise monotone);
  // invisible/visible are re-derived rather than resized independently
  Mask modal = resize_mask(ms.modal, th, tw, MaskResize::AnyValid);
  Mask amodal = resize_mask(ms.amodal, th, tw, MaskResize::AnyValid);
  Mask occ = resize_mask(ms.occlusion, th, tw, MaskResize::AnyValid);
  return build_mask_set(modal, amodal, occ);
}

Mask update_invisible_mask(const Mask& inv, int window, bool shifted) {
  if (window < 1)
    throw ValueError("update_invisible_mask: window must be >= 1");
  if (inv.h % window || inv.w % window)
    throw ValueError("update_invisible_mask: window " +
                     std::to_string(window) + " does not tile " +
                     std::to_string(inv.h) + "x" + std::to_string(inv.w));
  int64_t shift = shifted ? window / 2 : 0;
  int64_t nh = inv.h / window, nw = inv.w / window;
  Mask out(inv.h, inv.w, 1);
  for (int64_t wy = 0; wy < nh; ++wy)
    for (int64_t wx = 0; wx < nw; ++wx) {
      bool any_valid = false;
      for (int64_t ly = 0; ly < window && !any_valid; ++ly)
        for (int64_t lx = 0; lx < window; ++lx) {
          int64_t sy = (wy * window + ly + shift) % inv.h;
          int64_t sx = (wx * window + lx + shift) % inv.w;
          if (!inv.at(sy, sx)) {
            any_valid = true;
            break;
          }
        }
      for (int64_t ly = 0; ly < window; ++ly)
        for (int64_t lx = 0; lx < window; ++lx) {
          int64_t sy = (wy * window + ly + shift) % inv.h;
          int64_t sx = (wx * window + lx + shift) % inv.w;
          out.at(sy, sx) = any_valid ? 0 : 1;
        }
    }
  return out;
}

}  // namespace dmat
