#include "deformcap/rasterizer.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deformcap {

void rasterize_into(std::span<const LabeledMesh> meshes, const CameraParams& cam, DepthBuffer& buf) {
  buf.width = cam.width;
  buf.height = cam.height;
  const std::size_t n = std::size_t(cam.width) * cam.height;
  buf.depth.assign(n, std::numeric_limits<double>::infinity());
  buf.label.assign(n, PixelLabel::Empty);
  buf.mesh_index.assign(n, -1);
  buf.face_index.assign(n, -1);

  std::vector<Vector3d> screen;
  for (std::size_t mi = 0; mi < meshes.size(); ++mi) {
    const PixelLabel label = meshes[mi].label;
    scan_mesh(*meshes[mi].mesh, cam, screen, [&](int x, int y, double z, std::size_t fi) {
      const std::size_t idx = buf.index(x, y);
      if (z < buf.depth[idx]) {
        buf.depth[idx] = z;
        buf.label[idx] = label;
        buf.mesh_index[idx] = static_cast<std::int32_t>(mi);
        buf.face_index[idx] = static_cast<std::int32_t>(fi);
      }
    });
  }
}

DepthBuffer rasterize(std::span<const LabeledMesh> meshes, const CameraParams& cam) {
  DepthBuffer buf;
  rasterize_into(meshes, cam, buf);
  return buf;
}

MaskImage object_visible_mask(const DepthBuffer& buf, int view) {
  MaskImage mask(view, buf.width, buf.height);
  for (std::size_t i = 0; i < buf.label.size(); ++i) {
    mask.pixels[i] = buf.label[i] == PixelLabel::Object ? 255 : 0;
  }
  return mask;
}

MaskImage label_image(const DepthBuffer& buf, int view) {
  MaskImage img(view, buf.width, buf.height);
  for (std::size_t i = 0; i < buf.label.size(); ++i) {
    switch (buf.label[i]) {
      case PixelLabel::Empty:
        img.pixels[i] = 0;
        break;
      case PixelLabel::Hand:
        img.pixels[i] = 128;
        break;
      case PixelLabel::Object:
        img.pixels[i] = 255;
        break;
    }
  }
  return img;
}

std::vector<Pixel> mask_boundary(const MaskImage& mask) {
  std::vector<Pixel> out;
  auto bg = [&](int x, int y) {
    return x < 0 || y < 0 || x >= mask.width || y >= mask.height || !mask.foreground(x, y);
  };
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.foreground(x, y)) continue;
      if (bg(x - 1, y) || bg(x + 1, y) || bg(x, y - 1) || bg(x, y + 1)) {
        out.push_back({x, y});
      }
    }
  }
  return out;
}

} // namespace deformcap
