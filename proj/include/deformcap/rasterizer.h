#pragma once

#include "deformcap/camera.h"
#include "deformcap/mesh.h"
#include "deformcap/observations.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace deformcap {

enum class PixelLabel : std::uint8_t { Empty = 0, Hand = 1, Object = 2 };

/// Per-pixel camera-space depth, label and generating triangle.
struct DepthBuffer {
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<PixelLabel> label;
  /// Index into the rasterized mesh list and face within that mesh; -1
  /// where empty.
  std::vector<std::int32_t> mesh_index;
  std::vector<std::int32_t> face_index;

  std::size_t index(int x, int y) const {
    return std::size_t(y) * width + x;
  }
};

struct LabeledMesh {
  const TriMesh* mesh = nullptr;
  PixelLabel label = PixelLabel::Object;
};

/// Depth below which a triangle vertex counts as behind the camera; any
/// such vertex rejects the whole triangle.
inline constexpr double kNearPlaneMm = 0.1;

/// Calls frag(x, y, z, face) for every pixel center covered by a face of
/// `mesh` (inclusive edges, perspective-correct camera depth z). `screen`
/// is scratch storage. With `front_only`, faces turned away from the camera
/// are skipped, which leaves the nearest surface of a closed mesh unchanged.
template <class Fragment>
void scan_mesh(const TriMesh& mesh, const CameraParams& cam, std::vector<Eigen::Vector3d>& screen,
               Fragment&& frag, bool front_only = false) {
  const Matrix3d m = cam.K * cam.R;
  const Vector3d mt = cam.K * cam.T;
  screen.resize(mesh.vertices.size());
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const Vector3d h = m * mesh.vertices[v] + mt;
    const double zc = cam.R.row(2).dot(mesh.vertices[v]) + cam.T.z();
    screen[v] = {h.x() / h.z(), h.y() / h.z(), zc};
  }
  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const auto& f = mesh.faces[fi];
    const Vector3d& a = screen[f[0]];
    const Vector3d& b = screen[f[1]];
    const Vector3d& c = screen[f[2]];
    if (a.z() <= kNearPlaneMm || b.z() <= kNearPlaneMm || c.z() <= kNearPlaneMm) continue;
    const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    if (area == 0.0 || !std::isfinite(area)) continue;
    if (front_only && area > 0.0) continue;  // negative screen area faces the camera
    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}))));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}))));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}))));
    if (x0 > x1 || y0 > y1) continue;
    const double inv_area = 1.0 / area;
    const double iza = 1.0 / a.z();
    const double izb = 1.0 / b.z();
    const double izc = 1.0 / c.z();
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        // Barycentric weights of the pixel center.
        const double w0 = ((b.x() - x) * (c.y() - y) - (b.y() - y) * (c.x() - x)) * inv_area;
        const double w1 = ((c.x() - x) * (a.y() - y) - (c.y() - y) * (a.x() - x)) * inv_area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        // 1/z is affine in screen space.
        frag(x, y, 1.0 / (w0 * iza + w1 * izb + w2 * izc), fi);
      }
    }
  }
}

/// Z-buffered rendering with pixel-center sampling. Ties resolve to the
/// earlier (mesh, face) in submission order.
DepthBuffer rasterize(std::span<const LabeledMesh> meshes, const CameraParams& cam);

/// Reuses `buf`'s storage; same result as rasterize().
void rasterize_into(std::span<const LabeledMesh> meshes, const CameraParams& cam, DepthBuffer& buf);

/// 255 where the front-most surface is the object.
MaskImage object_visible_mask(const DepthBuffer& buf, int view = 0);

/// Label plane as an 8-bit image (empty 0, hand 128, object 255).
MaskImage label_image(const DepthBuffer& buf, int view = 0);

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Foreground pixels with at least one background 4-neighbor; the image
/// border counts as background. Row-major order.
std::vector<Pixel> mask_boundary(const MaskImage& mask);

} // namespace deformcap
