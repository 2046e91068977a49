#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace meshreason {

using Vec3 = Eigen::Vector3d;
using FaceIndex = std::uint32_t;
using Triangle = std::array<std::uint32_t, 3>;

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Triangle soup with shared vertices. Faces reference `vertices` by index.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> faces;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t face_count() const { return faces.size(); }

  const Vec3& corner(FaceIndex f, int k) const { return vertices[faces[f][k]]; }

  Vec3 face_centroid(FaceIndex f) const {
    return (corner(f, 0) + corner(f, 1) + corner(f, 2)) / 3.0;
  }

  // Non-normalized; length is twice the area.
  Vec3 face_cross(FaceIndex f) const {
    return (corner(f, 1) - corner(f, 0)).cross(corner(f, 2) - corner(f, 0));
  }

  double face_area(FaceIndex f) const { return 0.5 * face_cross(f).norm(); }

  Vec3 face_normal(FaceIndex f) const {
    const Vec3 n = face_cross(f);
    const double len = n.norm();
    return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
  }
};

inline constexpr double kDegenerateArea = 1e-12;

struct LoadStats {
  std::size_t polygonsRead = 0;
  std::size_t trianglesEmitted = 0;
  std::size_t degenerateRemoved = 0;
};

/// Axis-aligned bounding box diagonal; used as the length scale for tolerances.
inline double mesh_diameter(const Mesh& mesh) {
  if (mesh.vertices.empty()) return 0.0;
  Vec3 lo = mesh.vertices.front();
  Vec3 hi = lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return (hi - lo).norm();
}

inline double mean_edge_length(const Mesh& mesh) {
  double total = 0.0;
  std::size_t count = 0;
  for (FaceIndex f = 0; f < mesh.face_count(); ++f) {
    for (int k = 0; k < 3; ++k) {
      total += (mesh.corner(f, (k + 1) % 3) - mesh.corner(f, k)).norm();
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

namespace detail {

// Drops faces with repeated indices or area <= kDegenerateArea.
inline std::size_t remove_degenerate(Mesh& mesh) {
  std::vector<Triangle> kept;
  kept.reserve(mesh.faces.size());
  for (FaceIndex f = 0; f < mesh.face_count(); ++f) {
    const auto& t = mesh.faces[f];
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    if (mesh.face_area(f) <= kDegenerateArea) continue;
    kept.push_back(t);
  }
  const std::size_t removed = mesh.faces.size() - kept.size();
  mesh.faces = std::move(kept);
  return removed;
}

inline void push_polygon(Mesh& mesh, const std::vector<std::int64_t>& poly, LoadStats& stats) {
  ++stats.polygonsRead;
  if (poly.size() < 3) return;
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
    mesh.faces.push_back({static_cast<std::uint32_t>(poly[0]), static_cast<std::uint32_t>(poly[k]),
                          static_cast<std::uint32_t>(poly[k + 1])});
    ++stats.trianglesEmitted;
  }
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline Mesh parse_obj(std::istream& in, LoadStats& stats) {
  Mesh mesh;
  std::string line;
  std::size_t lineNo = 0;
  std::vector<std::int64_t> poly;
  while (std::getline(in, line)) {
    ++lineNo;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) {
        throw MeshError("OBJ line " + std::to_string(lineNo) + ": malformed vertex");
      }
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      poly.clear();
      std::string tok;
      while (ls >> tok) {
        const auto slash = tok.find('/');
        const std::string head = tok.substr(0, slash);
        std::int64_t idx = 0;
        try {
          std::size_t used = 0;
          idx = std::stoll(head, &used);
          if (used != head.size()) throw std::invalid_argument(head);
        } catch (const std::exception&) {
          throw MeshError("OBJ line " + std::to_string(lineNo) + ": bad face index '" + tok + "'");
        }
        const auto n = static_cast<std::int64_t>(mesh.vertices.size());
        // 1-based; negative indices count back from the latest vertex.
        const std::int64_t resolved = idx > 0 ? idx - 1 : n + idx;
        if (idx == 0 || resolved < 0 || resolved >= n) {
          throw MeshError("OBJ line " + std::to_string(lineNo) + ": face index out of range");
        }
        poly.push_back(resolved);
      }
      push_polygon(mesh, poly, stats);
    }
    // vt, vn, usemtl, mtllib, o, g, s, l, ... carry nothing geometry needs.
  }
  return mesh;
}

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

inline PlyType ply_type(const std::string& name) {
  static const std::map<std::string, PlyType> table = {
      {"char", PlyType::Int8},     {"int8", PlyType::Int8},       {"uchar", PlyType::UInt8},
      {"uint8", PlyType::UInt8},   {"short", PlyType::Int16},     {"int16", PlyType::Int16},
      {"ushort", PlyType::UInt16}, {"uint16", PlyType::UInt16},   {"int", PlyType::Int32},
      {"int32", PlyType::Int32},   {"uint", PlyType::UInt32},     {"uint32", PlyType::UInt32},
      {"float", PlyType::Float32}, {"float32", PlyType::Float32}, {"double", PlyType::Float64},
      {"float64", PlyType::Float64}};
  const auto it = table.find(name);
  if (it == table.end()) throw MeshError("PLY: unknown property type '" + name + "'");
  return it->second;
}

inline std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool isList = false;
  PlyType countType = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

enum class PlyFormat { Ascii, BinaryLE, BinaryBE };

class PlyReader {
 public:
  PlyReader(std::istream& in, PlyFormat format) : in_(in), format_(format) {}

  double read(PlyType t) {
    if (format_ == PlyFormat::Ascii) {
      double v;
      if (!(in_ >> v)) throw MeshError("PLY: truncated ASCII body");
      return v;
    }
    unsigned char buf[8];
    const std::size_t n = ply_size(t);
    if (!in_.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))) {
      throw MeshError("PLY: truncated binary body");
    }
    const bool hostLittle = std::endian::native == std::endian::little;
    if ((format_ == PlyFormat::BinaryLE) != hostLittle) std::reverse(buf, buf + n);
    switch (t) {
      case PlyType::Int8: return static_cast<double>(static_cast<std::int8_t>(buf[0]));
      case PlyType::UInt8: return static_cast<double>(buf[0]);
      case PlyType::Int16: return load<std::int16_t>(buf);
      case PlyType::UInt16: return load<std::uint16_t>(buf);
      case PlyType::Int32: return load<std::int32_t>(buf);
      case PlyType::UInt32: return load<std::uint32_t>(buf);
      case PlyType::Float32: return load<float>(buf);
      case PlyType::Float64: return load<double>(buf);
    }
    return 0.0;
  }

 private:
  template <typename T>
  static double load(const unsigned char* buf) {
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return static_cast<double>(v);
  }

  std::istream& in_;
  PlyFormat format_;
};

inline Mesh parse_ply(std::istream& in, LoadStats& stats) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw MeshError("PLY: missing magic");
  PlyFormat format = PlyFormat::Ascii;
  bool sawFormat = false;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string f;
      ls >> f;
      if (f == "ascii") format = PlyFormat::Ascii;
      else if (f == "binary_little_endian") format = PlyFormat::BinaryLE;
      else if (f == "binary_big_endian") format = PlyFormat::BinaryBE;
      else throw MeshError("PLY: unknown format '" + f + "'");
      sawFormat = true;
    } else if (tag == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) throw MeshError("PLY: property before element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string countType, itemType;
        ls >> countType >> itemType >> p.name;
        p.isList = true;
        p.countType = ply_type(countType);
        p.type = ply_type(itemType);
      } else {
        p.type = ply_type(type);
        ls >> p.name;
      }
      elements.back().properties.push_back(p);
    } else if (tag == "end_header") {
      break;
    }
  }
  if (!sawFormat) throw MeshError("PLY: missing format line");

  Mesh mesh;
  PlyReader reader(in, format);
  std::vector<std::int64_t> poly;
  for (const auto& e : elements) {
    const bool isVertex = e.name == "vertex";
    const bool isFace = e.name == "face";
    for (std::size_t row = 0; row < e.count; ++row) {
      Vec3 p = Vec3::Zero();
      poly.clear();
      for (const auto& prop : e.properties) {
        if (prop.isList) {
          const auto n = static_cast<std::int64_t>(reader.read(prop.countType));
          if (n < 0) throw MeshError("PLY: negative list length");
          const bool indices = isFace && (prop.name == "vertex_indices" || prop.name == "vertex_index");
          for (std::int64_t k = 0; k < n; ++k) {
            const double v = reader.read(prop.type);
            if (indices) poly.push_back(static_cast<std::int64_t>(v));
          }
        } else {
          const double v = reader.read(prop.type);
          if (isVertex) {
            if (prop.name == "x") p.x() = v;
            else if (prop.name == "y") p.y() = v;
            else if (prop.name == "z") p.z() = v;
          }
        }
      }
      if (isVertex) mesh.vertices.push_back(p);
      if (isFace) {
        for (const auto idx : poly) {
          if (idx < 0 || idx >= static_cast<std::int64_t>(mesh.vertices.size())) {
            throw MeshError("PLY: face index out of range");
          }
        }
        push_polygon(mesh, poly, stats);
      }
    }
  }
  return mesh;
}

}  // namespace detail

/// Reads an OBJ or PLY (ASCII or binary) triangle/polygon mesh. Polygons are
/// fan-triangulated and degenerate triangles are removed; the removal count
/// is reported through `stats`.
inline Mesh load_mesh(const std::filesystem::path& path, LoadStats* stats = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MeshError("cannot open mesh file: " + path.string());
  const std::string ext = detail::lower(path.extension().string());
  LoadStats local;
  Mesh mesh;
  if (ext == ".obj") {
    mesh = detail::parse_obj(in, local);
  } else if (ext == ".ply") {
    mesh = detail::parse_ply(in, local);
  } else {
    throw MeshError("unsupported mesh format '" + ext + "': " + path.string());
  }
  local.degenerateRemoved = detail::remove_degenerate(mesh);
  if (mesh.faces.empty()) throw MeshError("no valid faces in mesh: " + path.string());
  if (stats) *stats = local;
  return mesh;
}

/// Translates the vertex centroid to the origin and scales so the farthest
/// vertex lies on the unit sphere.
inline Mesh normalize(const Mesh& mesh) {
  if (mesh.vertices.empty()) throw MeshError("normalize: empty mesh");
  Vec3 centroid = Vec3::Zero();
  for (const auto& v : mesh.vertices) centroid += v;
  centroid /= static_cast<double>(mesh.vertices.size());
  double maxNorm = 0.0;
  for (const auto& v : mesh.vertices) maxNorm = std::max(maxNorm, (v - centroid).norm());
  if (!(maxNorm > 1e-12 * (1.0 + centroid.norm()))) {
    throw MeshError("normalize: all vertices coincide, scale undefined");
  }
  Mesh out = mesh;
  for (auto& v : out.vertices) v = (v - centroid) / maxNorm;
  return out;
}

// Face-face relations. Lists are sorted and exclude the face itself.
struct FaceGraph {
  std::vector<std::vector<FaceIndex>> vertexAdjacency;
  std::vector<std::vector<FaceIndex>> edgeAdjacency;

  std::size_t face_count() const { return vertexAdjacency.size(); }
};

inline FaceGraph build_face_graph(const Mesh& mesh) {
  const std::size_t nf = mesh.face_count();
  std::vector<std::vector<FaceIndex>> incident(mesh.vertex_count());
  for (FaceIndex f = 0; f < nf; ++f) {
    for (auto v : mesh.faces[f]) incident[v].push_back(f);
  }

  FaceGraph graph;
  graph.vertexAdjacency.resize(nf);
  graph.edgeAdjacency.resize(nf);
  std::vector<FaceIndex> scratch;
  for (FaceIndex f = 0; f < nf; ++f) {
    scratch.clear();
    for (auto v : mesh.faces[f]) {
      scratch.insert(scratch.end(), incident[v].begin(), incident[v].end());
    }
    std::sort(scratch.begin(), scratch.end());
    scratch.erase(std::unique(scratch.begin(), scratch.end()), scratch.end());
    std::erase(scratch, f);
    graph.vertexAdjacency[f] = scratch;

    // Edge neighbors share two of our vertex indices.
    for (auto g : scratch) {
      int shared = 0;
      for (auto a : mesh.faces[f])
        for (auto b : mesh.faces[g]) shared += (a == b);
      if (shared >= 2) graph.edgeAdjacency[f].push_back(g);
    }
  }
  return graph;
}

/// Breadth-first ring queries over the shared-vertex face graph. Reuses its
/// visit stamps between calls, so repeated queries cost only the ring size.
class RingWalker {
 public:
  explicit RingWalker(const FaceGraph& graph) : graph_(graph), stamp_(graph.face_count(), 0) {}

  /// Faces reachable from `face` through at most q intermediate faces
  /// (q+1 hops), including `face` itself. Unordered.
  const std::vector<FaceIndex>& ring(FaceIndex face, int q) {
    if (face >= graph_.face_count()) throw MeshError("q_ring: face index out of range");
    if (q < 0) throw MeshError("q_ring: q must be non-negative");
    if (++epoch_ == 0) {
      std::fill(stamp_.begin(), stamp_.end(), 0);
      epoch_ = 1;
    }
    visited_.assign(1, face);
    stamp_[face] = epoch_;
    std::size_t levelBegin = 0;
    for (int depth = 0; depth <= q; ++depth) {
      const std::size_t levelEnd = visited_.size();
      if (levelBegin == levelEnd) break;
      for (std::size_t i = levelBegin; i < levelEnd; ++i) {
        for (auto g : graph_.vertexAdjacency[visited_[i]]) {
          if (stamp_[g] == epoch_) continue;
          stamp_[g] = epoch_;
          visited_.push_back(g);
        }
      }
      levelBegin = levelEnd;
    }
    return visited_;
  }

 private:
  const FaceGraph& graph_;
  std::vector<std::uint32_t> stamp_;
  std::uint32_t epoch_ = 0;
  std::vector<FaceIndex> visited_;
};

/// Sorted q-rank neighborhood of `face` (see RingWalker::ring).
inline std::vector<FaceIndex> q_ring(const FaceGraph& graph, FaceIndex face, int q) {
  RingWalker walker(graph);
  std::vector<FaceIndex> out = walker.ring(face, q);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace meshreason
