#include "deformcap/observations.h"

#include "deformcap/errors.h"

#include <algorithm>

namespace deformcap {

std::size_t MaskImage::foreground_count() const {
  return static_cast<std::size_t>(
      std::count_if(pixels.begin(), pixels.end(), [](std::uint8_t p) { return p != 0; }));
}

MaskOverlap mask_overlap(const MaskImage& a, const MaskImage& b) {
  if (a.width != b.width || a.height != b.height) {
    throw InputError("mask dimension mismatch: " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height));
  }
  MaskOverlap out;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const bool pa = a.pixels[i] != 0;
    const bool pb = b.pixels[i] != 0;
    out.intersection += (pa && pb) ? 1 : 0;
    out.union_ += (pa || pb) ? 1 : 0;
  }
  return out;
}

MaskImage downsample_mask(const MaskImage& mask, int factor) {
  if (factor <= 1) {
    return mask;
  }
  const int w = (mask.width + factor / 2) / factor;
  const int h = (mask.height + factor / 2) / factor;
  MaskImage out(mask.view, w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int on = 0;
      int total = 0;
      for (int dy = 0; dy < factor; ++dy) {
        const int sy = y * factor + dy;
        if (sy >= mask.height) break;
        for (int dx = 0; dx < factor; ++dx) {
          const int sx = x * factor + dx;
          if (sx >= mask.width) break;
          ++total;
          on += mask.foreground(sx, sy) ? 1 : 0;
        }
      }
      out.set(x, y, total > 0 && 2 * on >= total);
    }
  }
  return out;
}

MaskImage morph_mask(const MaskImage& mask, int radius) {
  if (radius == 0) {
    return mask;
  }
  const bool dilate = radius > 0;
  const int r = std::abs(radius);
  MaskImage out(mask.view, mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      bool result = !dilate;
      for (int dy = -r; dy <= r && result != dilate; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (dx * dx + dy * dy > r * r) continue;
          const int sx = x + dx;
          const int sy = y + dy;
          const bool inside = sx >= 0 && sy >= 0 && sx < mask.width && sy < mask.height;
          const bool fg = inside && mask.foreground(sx, sy);
          if (dilate && fg) {
            result = true;
            break;
          }
          if (!dilate && !fg) {
            result = false;
            break;
          }
        }
      }
      out.set(x, y, result);
    }
  }
  return out;
}

} // namespace deformcap
