#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "meshreason/image.hpp"
#include "meshreason/mesh.hpp"

namespace meshreason {

inline constexpr std::uint32_t kBackground = 0xFFFFFFFFu;

/// Pinhole camera. View space is x right, y up, z along the viewing
/// direction (positive depth in front of the camera).
struct Camera {
  Vec3 position{0, 0, 2.2};
  Vec3 lookAt{0, 0, 0};
  Vec3 up{0, 1, 0};
  double verticalFovDegrees = 50.0;
  int width = 1024;
  int height = 1024;

  void validate() const {
    if ((position - lookAt).norm() <= 0.0) throw std::invalid_argument("camera: position equals lookAt");
    if (!(verticalFovDegrees > 0.0 && verticalFovDegrees < 180.0)) {
      throw std::invalid_argument("camera: fov must lie in (0, 180) degrees");
    }
    if (width < 1 || height < 1) throw std::invalid_argument("camera: image size must be positive");
    if (forward().cross(up).norm() < 1e-12) throw std::invalid_argument("camera: up is parallel to view direction");
  }

  Vec3 forward() const { return (lookAt - position).normalized(); }
  Vec3 right() const { return forward().cross(up).normalized(); }
  Vec3 true_up() const { return right().cross(forward()); }

  double focal() const { return 1.0 / std::tan(verticalFovDegrees * std::numbers::pi / 360.0); }
  double aspect() const { return static_cast<double>(width) / height; }

  Vec3 to_view(const Vec3& p) const {
    const Vec3 d = p - position;
    return {d.dot(right()), d.dot(true_up()), d.dot(forward())};
  }

  // Continuous pixel coordinates; pixel (i, j) has its center at (i+0.5, j+0.5).
  Eigen::Vector2d view_to_screen(const Vec3& v) const {
    const double f = focal();
    const double ndcX = f * v.x() / (v.z() * aspect());
    const double ndcY = f * v.y() / v.z();
    return {(ndcX + 1.0) * 0.5 * width, (1.0 - ndcY) * 0.5 * height};
  }
};

struct PixelHit {
  int x = 0;
  int y = 0;
  double depth = 0.0;
};

/// Projects a world-space point; nullopt when behind the camera or outside the frame.
inline std::optional<PixelHit> project(const Camera& camera, const Vec3& p) {
  const Vec3 v = camera.to_view(p);
  if (v.z() <= 0.0) return std::nullopt;
  const Eigen::Vector2d s = camera.view_to_screen(v);
  const int x = static_cast<int>(std::floor(s.x()));
  const int y = static_cast<int>(std::floor(s.y()));
  if (x < 0 || y < 0 || x >= camera.width || y >= camera.height) return std::nullopt;
  return PixelHit{x, y, v.z()};
}

struct ViewRender {
  int viewIndex = 0;
  Camera camera;
  RgbImage color;
  std::vector<std::uint32_t> faceId;
  std::vector<double> depth;

  int width() const { return color.width; }
  int height() const { return color.height; }
  std::uint32_t face_at(int x, int y) const { return faceId[static_cast<std::size_t>(y) * width() + x]; }
};

/// Cameras evenly spaced in azimuth around +Y, looking at the origin.
/// Azimuth 0 sits on +Z; azimuth grows toward +X.
inline std::vector<Camera> make_view_ring(int nViews, int width, int height, double distance, double fovDegrees,
                                          double elevationDegrees = 0.0) {
  if (nViews < 1) throw std::invalid_argument("make_view_ring: need at least one view");
  if (!(distance > 1.0)) throw std::invalid_argument("make_view_ring: distance must exceed the unit sphere");
  std::vector<Camera> cams;
  cams.reserve(static_cast<std::size_t>(nViews));
  const double elev = elevationDegrees * std::numbers::pi / 180.0;
  for (int i = 0; i < nViews; ++i) {
    const double az = 2.0 * std::numbers::pi * i / nViews;
    Camera c;
    c.position = distance * Vec3(std::cos(elev) * std::sin(az), std::sin(elev), std::cos(elev) * std::cos(az));
    c.lookAt = Vec3::Zero();
    c.up = Vec3::UnitY();
    c.verticalFovDegrees = fovDegrees;
    c.width = width;
    c.height = height;
    c.validate();
    cams.push_back(c);
  }
  return cams;
}

namespace detail {

inline constexpr double kNearPlane = 1e-3;

// Sutherland-Hodgman against z >= near in view space.
inline std::vector<Vec3> clip_near(const std::array<Vec3, 3>& tri) {
  std::vector<Vec3> out;
  for (int k = 0; k < 3; ++k) {
    const Vec3& a = tri[k];
    const Vec3& b = tri[(k + 1) % 3];
    const bool ina = a.z() >= kNearPlane;
    const bool inb = b.z() >= kNearPlane;
    if (ina) out.push_back(a);
    if (ina != inb) {
      const double t = (kNearPlane - a.z()) / (b.z() - a.z());
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

inline double edge(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double px, double py) {
  return (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
}

}  // namespace detail

/// Z-buffered perspective rasterization with one sample at each pixel center.
/// No back-face culling. Equal depths resolve to the lower face index so the
/// face-ID buffer is deterministic.
inline ViewRender rasterize(const Mesh& mesh, const Camera& camera, int viewIndex = 0) {
  camera.validate();
  ViewRender out;
  out.viewIndex = viewIndex;
  out.camera = camera;
  out.color = RgbImage(camera.width, camera.height, 0);
  const std::size_t npix = out.color.pixel_count();
  out.faceId.assign(npix, kBackground);
  out.depth.assign(npix, std::numeric_limits<double>::infinity());

  for (FaceIndex f = 0; f < mesh.face_count(); ++f) {
    const std::array<Vec3, 3> tri{camera.to_view(mesh.corner(f, 0)), camera.to_view(mesh.corner(f, 1)),
                                  camera.to_view(mesh.corner(f, 2))};
    if (tri[0].z() < detail::kNearPlane && tri[1].z() < detail::kNearPlane && tri[2].z() < detail::kNearPlane) continue;
    const std::vector<Vec3> poly = detail::clip_near(tri);
    if (poly.size() < 3) continue;

    std::vector<Eigen::Vector2d> screen;
    screen.reserve(poly.size());
    for (const auto& v : poly) screen.push_back(camera.view_to_screen(v));

    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
      const std::array<std::size_t, 3> idx{0, k, k + 1};
      const Eigen::Vector2d& s0 = screen[idx[0]];
      const Eigen::Vector2d& s1 = screen[idx[1]];
      const Eigen::Vector2d& s2 = screen[idx[2]];
      const double area = detail::edge(s0, s1, s2.x(), s2.y());
      if (area == 0.0 || !std::isfinite(area)) continue;
      const double invZ0 = 1.0 / poly[idx[0]].z();
      const double invZ1 = 1.0 / poly[idx[1]].z();
      const double invZ2 = 1.0 / poly[idx[2]].z();

      const double minX = std::min({s0.x(), s1.x(), s2.x()});
      const double maxX = std::max({s0.x(), s1.x(), s2.x()});
      const double minY = std::min({s0.y(), s1.y(), s2.y()});
      const double maxY = std::max({s0.y(), s1.y(), s2.y()});
      const double wLim = camera.width;
      const double hLim = camera.height;
      const int x0 = static_cast<int>(std::clamp(std::ceil(minX - 0.5), 0.0, wLim));
      const int x1 = static_cast<int>(std::clamp(std::floor(maxX - 0.5), -1.0, wLim - 1.0));
      const int y0 = static_cast<int>(std::clamp(std::ceil(minY - 0.5), 0.0, hLim));
      const int y1 = static_cast<int>(std::clamp(std::floor(maxY - 0.5), -1.0, hLim - 1.0));

      for (int y = y0; y <= y1; ++y) {
        const double py = y + 0.5;
        for (int x = x0; x <= x1; ++x) {
          const double px = x + 0.5;
          double w0 = detail::edge(s1, s2, px, py) / area;
          double w1 = detail::edge(s2, s0, px, py) / area;
          double w2 = detail::edge(s0, s1, px, py) / area;
          if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
          // 1/z is affine in screen space.
          const double depth = 1.0 / (w0 * invZ0 + w1 * invZ1 + w2 * invZ2);
          const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
          if (depth < out.depth[p] || (depth == out.depth[p] && f < out.faceId[p])) {
            out.depth[p] = depth;
            out.faceId[p] = f;
          }
        }
      }
    }
  }

  // Flat shading with a headlight.
  std::vector<std::uint8_t> shade(mesh.face_count());
  for (FaceIndex f = 0; f < mesh.face_count(); ++f) {
    const Vec3 toCam = (camera.position - mesh.face_centroid(f)).normalized();
    const double lambert = std::abs(mesh.face_normal(f).dot(toCam));
    shade[f] = static_cast<std::uint8_t>(std::lround(40.0 + 200.0 * lambert));
  }
  for (std::size_t p = 0; p < npix; ++p) {
    const auto f = out.faceId[p];
    if (f == kBackground) continue;
    std::uint8_t* px = out.color.data.data() + 3 * p;
    px[0] = px[1] = px[2] = shade[f];
  }
  return out;
}

/// Pixel count per visible face.
inline std::map<FaceIndex, std::size_t> visible_faces(const ViewRender& view) {
  std::map<FaceIndex, std::size_t> hist;
  for (auto f : view.faceId) {
    if (f != kBackground) ++hist[f];
  }
  return hist;
}

/// Raw face-ID dump: one little-endian uint32 per pixel, row-major.
inline std::string encode_face_ids(const ViewRender& view) {
  std::string bytes(view.faceId.size() * 4, '\0');
  for (std::size_t p = 0; p < view.faceId.size(); ++p) {
    const auto v = view.faceId[p];
    for (int b = 0; b < 4; ++b) bytes[4 * p + b] = static_cast<char>((v >> (8 * b)) & 0xFFu);
  }
  return bytes;
}

inline std::vector<std::uint32_t> decode_face_ids(std::string_view bytes) {
  if (bytes.size() % 4 != 0) throw std::invalid_argument("face-id dump size is not a multiple of 4");
  std::vector<std::uint32_t> ids(bytes.size() / 4);
  for (std::size_t p = 0; p < ids.size(); ++p) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * p + b])) << (8 * b);
    ids[p] = v;
  }
  return ids;
}

}  // namespace meshreason
