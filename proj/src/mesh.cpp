#include "deformcap/mesh.h"

#include "deformcap/errors.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace deformcap {

void TriMesh::compute_normals() {
  normals.assign(vertices.size(), Vector3d::Zero());
  for (const auto& f : faces) {
    const Vector3d& a = vertices[f[0]];
    const Vector3d& b = vertices[f[1]];
    const Vector3d& c = vertices[f[2]];
    // Cross product length is twice the area: area weighting for free.
    const Vector3d n = (b - a).cross(c - a);
    for (int k = 0; k < 3; ++k) {
      normals[f[k]] += n;
    }
  }
  for (auto& n : normals) {
    const double len = n.norm();
    if (len > 0.0) {
      n /= len;
    }
  }
}

Aabb bounding_box(const TriMesh& mesh) {
  Aabb box;
  for (const auto& v : mesh.vertices) {
    box.extend(v);
  }
  return box;
}

namespace {

std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
      static_cast<std::uint32_t>(b);
}

} // namespace

EdgeReport analyze_edges(const TriMesh& mesh) {
  std::unordered_map<std::uint64_t, int> counts;
  counts.reserve(mesh.faces.size() * 2);
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      ++counts[edge_key(f[k], f[(k + 1) % 3])];
    }
  }
  EdgeReport report;
  report.edge_count = counts.size();
  for (const auto& [key, count] : counts) {
    if (count != 2) {
      report.non_manifold.push_back(
          {{static_cast<int>(key >> 32), static_cast<int>(key & 0xffffffffu)}, count});
    }
  }
  std::sort(report.non_manifold.begin(), report.non_manifold.end());
  return report;
}

long euler_characteristic(const TriMesh& mesh) {
  const auto report = analyze_edges(mesh);
  return static_cast<long>(mesh.vertices.size()) - static_cast<long>(report.edge_count) +
      static_cast<long>(mesh.faces.size());
}

bool is_watertight(const TriMesh& mesh) {
  return !mesh.faces.empty() && analyze_edges(mesh).non_manifold.empty();
}

void require_watertight(const TriMesh& mesh, const char* what) {
  if (mesh.faces.empty()) {
    throw InputError(std::string(what) + " mesh is not watertight: no faces");
  }
  const auto report = analyze_edges(mesh);
  if (report.non_manifold.empty()) {
    return;
  }
  std::ostringstream msg;
  msg << what << " mesh is not watertight: " << report.non_manifold.size()
      << " edge(s) not shared by exactly two faces:";
  const std::size_t shown = std::min<std::size_t>(report.non_manifold.size(), 8);
  for (std::size_t i = 0; i < shown; ++i) {
    const auto& [edge, count] = report.non_manifold[i];
    msg << " (" << edge.first << "," << edge.second << ")x" << count;
  }
  if (shown < report.non_manifold.size()) {
    msg << " ...";
  }
  throw InputError(msg.str());
}

TriMesh transformed(const TriMesh& mesh, const Matrix3d& rotation, const Vector3d& translation) {
  TriMesh out;
  out.faces = mesh.faces;
  out.vertices.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) {
    out.vertices.push_back(rotation * v + translation);
  }
  out.normals.reserve(mesh.normals.size());
  for (const auto& n : mesh.normals) {
    out.normals.push_back(rotation * n);
  }
  return out;
}

Vector3d face_normal(const TriMesh& mesh, std::size_t face) {
  const auto& f = mesh.faces[face];
  const Vector3d n = (mesh.vertices[f[1]] - mesh.vertices[f[0]])
                         .cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
  const double len = n.norm();
  return len > 0.0 ? Vector3d(n / len) : Vector3d::Zero();
}

double signed_volume(const TriMesh& mesh) {
  double six_vol = 0.0;
  for (const auto& f : mesh.faces) {
    six_vol += mesh.vertices[f[0]].dot(mesh.vertices[f[1]].cross(mesh.vertices[f[2]]));
  }
  return six_vol / 6.0;
}

TriMesh make_icosphere(double radius, int subdivisions, const Vector3d& center) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vector3d> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) {
    v.normalize();
  }
  std::vector<Vector3i> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) {
        return it->second;
      }
      verts.push_back((verts[a] + verts[b]).normalized());
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Vector3i> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]);
      const int bc = mid(f[1], f[2]);
      const int ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  TriMesh mesh;
  mesh.faces = std::move(faces);
  mesh.vertices.reserve(verts.size());
  for (const auto& v : verts) {
    mesh.vertices.push_back(center + radius * v);
  }
  mesh.compute_normals();
  return mesh;
}

TriMesh make_capsule(const Vector3d& a, const Vector3d& b, double radius, int segments,
                     int cap_rings, int body_rings) {
  Vector3d axis = b - a;
  const double length = axis.norm();
  axis = length > 0.0 ? Vector3d(axis / length) : Vector3d::UnitZ();
  // Orthonormal frame around the axis.
  const Vector3d helper = std::abs(axis.x()) < 0.9 ? Vector3d::UnitX() : Vector3d::UnitY();
  const Vector3d u = axis.cross(helper).normalized();
  const Vector3d w = axis.cross(u);

  // Rings from the pole at `a` to the pole at `b`: each ring is
  // (center along axis, ring radius).
  std::vector<std::pair<double, double>> rings;
  for (int i = 1; i <= cap_rings; ++i) {
    const double phi = std::numbers::pi / 2.0 * (1.0 - static_cast<double>(i) / cap_rings);
    rings.push_back({-radius * std::sin(phi), radius * std::cos(phi)});
  }
  for (int i = 1; i < body_rings; ++i) {
    rings.push_back({length * i / body_rings, radius});
  }
  for (int i = 0; i < cap_rings; ++i) {
    const double phi = std::numbers::pi / 2.0 * static_cast<double>(i) / cap_rings;
    rings.push_back({length + radius * std::sin(phi), radius * std::cos(phi)});
  }

  TriMesh mesh;
  mesh.vertices.push_back(a - radius * axis);
  for (const auto& [along, r] : rings) {
    for (int s = 0; s < segments; ++s) {
      const double ang = 2.0 * std::numbers::pi * s / segments;
      mesh.vertices.push_back(a + along * axis + r * (std::cos(ang) * u + std::sin(ang) * w));
    }
  }
  mesh.vertices.push_back(b + radius * axis);
  const int ring_count = static_cast<int>(rings.size());
  const int bottom = 0;
  const int top = static_cast<int>(mesh.vertices.size()) - 1;
  auto idx = [&](int ring, int s) {
    return 1 + ring * segments + ((s % segments) + segments) % segments;
  };
  // Orientation: (u, w, axis) is right-handed, so increasing `s` winds
  // counter-clockwise seen from +axis.
  for (int s = 0; s < segments; ++s) {
    mesh.faces.push_back({bottom, idx(0, s + 1), idx(0, s)});
  }
  for (int r = 0; r + 1 < ring_count; ++r) {
    for (int s = 0; s < segments; ++s) {
      mesh.faces.push_back({idx(r, s), idx(r, s + 1), idx(r + 1, s + 1)});
      mesh.faces.push_back({idx(r, s), idx(r + 1, s + 1), idx(r + 1, s)});
    }
  }
  for (int s = 0; s < segments; ++s) {
    mesh.faces.push_back({top, idx(ring_count - 1, s), idx(ring_count - 1, s + 1)});
  }
  mesh.compute_normals();
  return mesh;
}

TriMesh make_box(const Vector3d& lo, const Vector3d& hi) {
  TriMesh mesh;
  for (int i = 0; i < 8; ++i) {
    mesh.vertices.push_back({(i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(),
                             (i & 4) ? hi.z() : lo.z()});
  }
  mesh.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  mesh.compute_normals();
  return mesh;
}

TriMesh merge_meshes(const std::vector<TriMesh>& meshes) {
  TriMesh out;
  for (const auto& m : meshes) {
    const int offset = static_cast<int>(out.vertices.size());
    out.vertices.insert(out.vertices.end(), m.vertices.begin(), m.vertices.end());
    for (const auto& f : m.faces) {
      out.faces.push_back(f + Vector3i::Constant(offset));
    }
  }
  out.compute_normals();
  return out;
}

} // namespace deformcap
