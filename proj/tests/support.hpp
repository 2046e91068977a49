#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "meshreason/fusion.hpp"
#include "meshreason/mesh.hpp"
#include "meshreason/renderer.hpp"
#include "meshreason/shapes.hpp"

namespace testsupport {

using namespace meshreason;

inline void write_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::ofstream out(path);
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.faces) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

struct LabeledMesh {
  Mesh mesh;
  std::vector<int> labels;
  std::vector<std::string> categories;
};

inline LabeledMesh hemisphere_sphere(int level = 3) {
  LabeledMesh out;
  out.mesh = normalize(shapes::icosphere(level));
  out.categories = {"top", "bottom"};
  for (FaceIndex f = 0; f < out.mesh.face_count(); ++f) out.labels.push_back(out.mesh.face_centroid(f).y() > 0 ? 0 : 1);
  return out;
}

inline LabeledMesh humanoid() {
  LabeledMesh out;
  out.categories = {"head", "torso", "legs"};
  auto add = [&](const Mesh& part, int label) {
    shapes::append(out.mesh, part);
    out.labels.resize(out.mesh.face_count(), label);
  };
  add(shapes::translated(shapes::icosphere(3, 0.35), Vec3(0, 1.45, 0)), 0);
  add(shapes::box(Vec3(-0.45, 0, -0.25), Vec3(0.45, 1.1, 0.25), 8), 1);
  add(shapes::cylinder(0.17, -1.3, 0, 24, 12, Vec3(-0.22, 0, 0)), 2);
  add(shapes::cylinder(0.17, -1.3, 0, 24, 12, Vec3(0.22, 0, 0)), 2);
  out.mesh = normalize(out.mesh);
  return out;
}

/// First hit of the ray through the center of pixel (px, py), by brute force
/// over every triangle (Moller-Trumbore). Ties go to the lower face index.
inline std::uint32_t raycast(const Mesh& mesh, const Camera& cam, int px, int py, double* depthOut = nullptr) {
  const double f = cam.focal();
  const double ndcX = (px + 0.5) / cam.width * 2.0 - 1.0;
  const double ndcY = 1.0 - (py + 0.5) / cam.height * 2.0;
  const Vec3 dir = (cam.forward() + cam.right() * (ndcX * cam.aspect() / f) + cam.true_up() * (ndcY / f));
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t hit = kBackground;
  for (FaceIndex i = 0; i < mesh.face_count(); ++i) {
    const Vec3& a = mesh.corner(i, 0);
    const Vec3 e1 = mesh.corner(i, 1) - a;
    const Vec3 e2 = mesh.corner(i, 2) - a;
    const Vec3 p = dir.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-15) continue;
    const Vec3 s = cam.position - a;
    const double u = s.dot(p) / det;
    if (u < 0 || u > 1) continue;
    const Vec3 qv = s.cross(e1);
    const double v = dir.dot(qv) / det;
    if (v < 0 || u + v > 1) continue;
    const double t = e2.dot(qv) / det;  // depth along forward, since dir has unit forward component
    if (t <= 1e-3) continue;
    if (t < best) {
      best = t;
      hit = i;
    }
  }
  if (depthOut) *depthOut = best;
  return hit;
}

/// All-pairs shortest paths over the dual graph (edge-adjacent faces, centroid
/// distances), by Floyd-Warshall.
inline std::vector<std::vector<double>> floyd_warshall(const Mesh& mesh) {
  const std::size_t n = mesh.face_count();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::size_t>> byEdge;
  for (std::size_t f = 0; f < n; ++f) {
    d[f][f] = 0;
    for (int k = 0; k < 3; ++k) {
      auto a = mesh.faces[f][k], b = mesh.faces[f][(k + 1) % 3];
      byEdge[{std::min(a, b), std::max(a, b)}].push_back(f);
    }
  }
  for (const auto& [edge, faces] : byEdge) {
    for (auto f : faces) {
      for (auto g : faces) {
        if (f == g) continue;
        d[f][g] = (mesh.face_centroid(static_cast<FaceIndex>(f)) - mesh.face_centroid(static_cast<FaceIndex>(g))).norm();
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

inline std::pair<double, double> two_pass_mean_std(const std::vector<double>& xs) {
  double sum = 0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

inline std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const auto [ma, sa] = two_pass_mean_std(ra);
  const auto [mb, sb] = two_pass_mean_std(rb);
  double cov = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) cov += (ra[i] - ma) * (rb[i] - mb);
  return cov / static_cast<double>(ra.size()) / (sa * sb);
}

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("meshreason_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Mask of the pixels whose visible face satisfies `pred`.
template <class Pred>
GrayImage face_mask(const ViewRender& view, Pred pred) {
  GrayImage m;
  m.width = view.width();
  m.height = view.height();
  m.data.assign(static_cast<std::size_t>(m.width) * m.height, 0);
  for (std::size_t i = 0; i < view.faceId.size(); ++i) {
    if (view.faceId[i] != kBackground && pred(view.faceId[i])) m.data[i] = 255;
  }
  return m;
}

inline CandidateMask candidate(GrayImage mask, double confidence, std::string text = {}) {
  CandidateMask c;
  c.bbox = tight_bbox(mask);
  c.mask = std::move(mask);
  c.confidence = confidence;
  c.answerText = std::move(text);
  return c;
}

}  // namespace testsupport
