#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "meshreason/mesh.hpp"

// Procedural meshes for tests, fixtures and demos.
namespace meshreason::shapes {

/// Subdivided icosahedron on a sphere of the given radius. Level 0 has 20
/// faces; every level multiplies the face count by four.
inline Mesh icosphere(int level, double radius = 1.0) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  Mesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoints;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      const auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      const auto idx = static_cast<std::uint32_t>(m.vertices.size());
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<Triangle> next;
    next.reserve(m.faces.size() * 4);
    for (const auto& f : m.faces) {
      const auto ab = midpoint(f[0], f[1]);
      const auto bc = midpoint(f[1], f[2]);
      const auto ca = midpoint(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.faces = std::move(next);
  }
  for (auto& v : m.vertices) v *= radius;
  return m;
}

/// n-by-n grid of unit squares in the z=0 plane, each split into two triangles.
inline Mesh grid(int n, double cell = 1.0) {
  Mesh m;
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) m.vertices.emplace_back(i * cell, j * cell, 0.0);
  auto id = [n](int i, int j) { return static_cast<std::uint32_t>(j * (n + 1) + i); };
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      m.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      m.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  return m;
}

/// Closed axis-aligned box; every side is split into an n-by-n grid.
inline Mesh box(const Vec3& lo, const Vec3& hi, int n = 1) {
  Mesh m;
  std::map<std::array<long, 3>, std::uint32_t> index;
  auto vertex = [&](int a, int b, int c) {
    const std::array<long, 3> key{a, b, c};
    const auto it = index.find(key);
    if (it != index.end()) return it->second;
    const Vec3 p(lo.x() + (hi.x() - lo.x()) * a / n, lo.y() + (hi.y() - lo.y()) * b / n,
                 lo.z() + (hi.z() - lo.z()) * c / n);
    const auto idx = static_cast<std::uint32_t>(m.vertices.size());
    m.vertices.push_back(p);
    index.emplace(key, idx);
    return idx;
  };
  // For each axis and side, walk the two remaining axes in an order that
  // keeps the outward winding.
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      const int u = (axis + 1) % 3;
      const int v = (axis + 2) % 3;
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
          auto at = [&](int di, int dj) {
            std::array<int, 3> c{};
            c[axis] = side * n;
            c[u] = i + di;
            c[v] = j + dj;
            return vertex(c[0], c[1], c[2]);
          };
          const auto a = at(0, 0), b = at(1, 0), c = at(1, 1), d = at(0, 1);
          if (side == 1) {
            m.faces.push_back({a, b, c});
            m.faces.push_back({a, c, d});
          } else {
            m.faces.push_back({a, c, b});
            m.faces.push_back({a, d, c});
          }
        }
      }
    }
  }
  return m;
}

/// Capped cylinder along +Y from y0 to y1.
inline Mesh cylinder(double radius, double y0, double y1, int segments, int rings, const Vec3& offset = Vec3::Zero()) {
  Mesh m;
  for (int r = 0; r <= rings; ++r) {
    const double y = y0 + (y1 - y0) * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double a = 2.0 * std::numbers::pi * s / segments;
      m.vertices.push_back(offset + Vec3(radius * std::cos(a), y, radius * std::sin(a)));
    }
  }
  auto id = [segments](int r, int s) { return static_cast<std::uint32_t>(r * segments + (s % segments)); };
  for (int r = 0; r < rings; ++r) {
    for (int s = 0; s < segments; ++s) {
      m.faces.push_back({id(r, s), id(r + 1, s), id(r + 1, s + 1)});
      m.faces.push_back({id(r, s), id(r + 1, s + 1), id(r, s + 1)});
    }
  }
  const auto bottom = static_cast<std::uint32_t>(m.vertices.size());
  m.vertices.push_back(offset + Vec3(0, y0, 0));
  const auto top = static_cast<std::uint32_t>(m.vertices.size());
  m.vertices.push_back(offset + Vec3(0, y1, 0));
  for (int s = 0; s < segments; ++s) {
    m.faces.push_back({bottom, id(0, s + 1), id(0, s)});
    m.faces.push_back({top, id(rings, s), id(rings, s + 1)});
  }
  return m;
}

/// Concatenates `part` into `into`; returns the index of the first appended face.
inline FaceIndex append(Mesh& into, const Mesh& part) {
  const auto base = static_cast<std::uint32_t>(into.vertices.size());
  const auto firstFace = static_cast<FaceIndex>(into.faces.size());
  into.vertices.insert(into.vertices.end(), part.vertices.begin(), part.vertices.end());
  for (auto f : part.faces) into.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
  return firstFace;
}

inline Mesh translated(Mesh m, const Vec3& by) {
  for (auto& v : m.vertices) v += by;
  return m;
}

}  // namespace meshreason::shapes
