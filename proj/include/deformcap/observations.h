#pragma once

#include "deformcap/rotation.h"

#include <cstdint>
#include <span>
#include <vector>

namespace deformcap {

/// One detected 2D hand keypoint in one view.
struct KeypointObservation {
  int view = 0;
  int joint = 0;
  Vector2d uv = Vector2d::Zero();
  double confidence = 0.0;
};

/// Binary silhouette: 0 = background, 255 = foreground. Row-major.
struct MaskImage {
  int view = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  MaskImage() = default;
  MaskImage(int view_id, int w, int h) : view(view_id), width(w), height(h), pixels(std::size_t(w) * h, 0) {}

  std::uint8_t at(int x, int y) const {
    return pixels[std::size_t(y) * width + x];
  }
  bool foreground(int x, int y) const {
    return pixels[std::size_t(y) * width + x] != 0;
  }
  void set(int x, int y, bool on) {
    pixels[std::size_t(y) * width + x] = on ? 255 : 0;
  }
  std::size_t foreground_count() const;
};

struct MaskOverlap {
  std::size_t intersection = 0;
  std::size_t union_ = 0;
};

/// Pixel counts of P ∩ G and P ∪ G. Masks must have equal dimensions.
MaskOverlap mask_overlap(const MaskImage& a, const MaskImage& b);

/// Majority-vote downsampling by an integer factor (>= half of the block
/// foreground keeps the pixel).
MaskImage downsample_mask(const MaskImage& mask, int factor);

/// Morphological dilation (radius > 0) or erosion (radius < 0) with a disk.
MaskImage morph_mask(const MaskImage& mask, int radius);

} // namespace deformcap
