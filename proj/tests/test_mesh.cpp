#include <gtest/gtest.h>

#include <fstream>
#include <queue>
#include <random>
#include <set>

#include "meshreason/mesh.hpp"
#include "meshreason/shapes.hpp"
#include "support.hpp"

using namespace meshreason;
namespace fs = std::filesystem;

namespace {

fs::path write_text(const fs::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
  return path;
}

void expect_mesh_invariants(const Mesh& m) {
  for (FaceIndex f = 0; f < m.face_count(); ++f) {
    const auto& t = m.faces[f];
    for (auto v : t) EXPECT_LT(v, m.vertex_count());
    EXPECT_NE(t[0], t[1]);
    EXPECT_NE(t[1], t[2]);
    EXPECT_NE(t[0], t[2]);
    EXPECT_GT(m.face_area(f), kDegenerateArea);
  }
}

}  // namespace

TEST(LoadMesh, SingleTriangleObj) {
  const auto dir = testsupport::temp_dir("obj1");
  const auto path = write_text(dir / "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  const Mesh m = load_mesh(path);
  EXPECT_EQ(m.face_count(), 1u);
  EXPECT_EQ(m.vertex_count(), 3u);
}

TEST(LoadMesh, QuadIsFanTriangulated) {
  const auto dir = testsupport::temp_dir("obj2");
  const auto path = write_text(dir / "q.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  LoadStats stats;
  const Mesh m = load_mesh(path, &stats);
  ASSERT_EQ(m.face_count(), 2u);
  EXPECT_EQ(stats.polygonsRead, 1u);
  EXPECT_EQ(stats.trianglesEmitted, 2u);
  EXPECT_EQ(m.faces[0], (Triangle{0, 1, 2}));
  EXPECT_EQ(m.faces[1], (Triangle{0, 2, 3}));
}

TEST(LoadMesh, ObjSlashesAndNegativeIndices) {
  const auto dir = testsupport::temp_dir("obj3");
  const auto path = write_text(dir / "s.obj",
                               "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\n"
                               "f 1/1/1 2/1/1 3/1/1\nf -3//1 -2//1 -1//1\n");
  const Mesh m = load_mesh(path);
  ASSERT_EQ(m.face_count(), 2u);
  EXPECT_EQ(m.faces[1], (Triangle{0, 1, 2}));
}

TEST(LoadMesh, ZeroAreaFaceIsDroppedAndCounted) {
  const auto dir = testsupport::temp_dir("obj4");
  const auto path = write_text(dir / "z.obj",
                               "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 0\nv 2 0 0\n"
                               "f 1 2 3\nf 1 4 2\nf 1 2 5\n");
  LoadStats stats;
  const Mesh m = load_mesh(path, &stats);

  // Cross-product oracle over the raw faces.
  const std::vector<Vec3> v{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 0}, {2, 0, 0}};
  const std::vector<std::array<int, 3>> raw{{0, 1, 2}, {0, 3, 1}, {0, 1, 4}};
  std::size_t degenerate = 0;
  for (const auto& t : raw) degenerate += 0.5 * (v[t[1]] - v[t[0]]).cross(v[t[2]] - v[t[0]]).norm() <= kDegenerateArea;

  EXPECT_EQ(stats.degenerateRemoved, degenerate);
  EXPECT_EQ(m.face_count(), raw.size() - degenerate);
  expect_mesh_invariants(m);
}

TEST(LoadMesh, RandomPolygonSoupsSatisfyInvariants) {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> coord(0, 3);
  const auto dir = testsupport::temp_dir("obj5");
  for (int trial = 0; trial < 30; ++trial) {
    std::ostringstream text;
    const int nv = 12;
    std::vector<Vec3> verts;
    for (int i = 0; i < nv; ++i) {
      verts.emplace_back(coord(rng), coord(rng), 0.0);
      text << "v " << verts.back().x() << ' ' << verts.back().y() << " 0\n";
    }
    std::size_t expectedKept = 0, expectedDropped = 0;
    std::uniform_int_distribution<int> idx(0, nv - 1);
    for (int f = 0; f < 20; ++f) {
      std::array<int, 3> t{idx(rng), idx(rng), idx(rng)};
      text << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
      const double a = 0.5 * (verts[t[1]] - verts[t[0]]).cross(verts[t[2]] - verts[t[0]]).norm();
      (a > kDegenerateArea ? expectedKept : expectedDropped) += 1;
    }
    const auto path = write_text(dir / "soup.obj", text.str());
    if (expectedKept == 0) {
      EXPECT_THROW(load_mesh(path), MeshError);
      continue;
    }
    LoadStats stats;
    const Mesh m = load_mesh(path, &stats);
    EXPECT_EQ(m.face_count(), expectedKept);
    EXPECT_EQ(stats.degenerateRemoved, expectedDropped);
    expect_mesh_invariants(m);
  }
}

TEST(LoadMesh, AsciiAndBinaryPlyAgree) {
  const auto dir = testsupport::temp_dir("ply");
  write_text(dir / "a.ply",
             "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n"
             "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
             "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");

  std::string bin =
      "ply\nformat binary_little_endian 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n"
      "property uchar red\nelement face 1\nproperty list uchar uint vertex_index\nend_header\n";
  const float pts[4][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  for (const auto& p : pts) {
    bin.append(reinterpret_cast<const char*>(p), sizeof p);
    bin.push_back('\x07');
  }
  bin.push_back('\x04');
  for (std::uint32_t i = 0; i < 4; ++i) bin.append(reinterpret_cast<const char*>(&i), 4);
  write_text(dir / "b.ply", bin);

  const Mesh a = load_mesh(dir / "a.ply");
  const Mesh b = load_mesh(dir / "b.ply");
  ASSERT_EQ(a.face_count(), 2u);
  EXPECT_EQ(a.faces, b.faces);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(a.vertices[i].isApprox(b.vertices[i]));
}

TEST(LoadMesh, Errors) {
  const auto dir = testsupport::temp_dir("obj_err");
  EXPECT_THROW(load_mesh(dir / "missing.obj"), MeshError);
  EXPECT_THROW(load_mesh(write_text(dir / "x.stl", "solid")), MeshError);
  EXPECT_THROW(load_mesh(write_text(dir / "empty.obj", "v 0 0 0\n")), MeshError);
  try {
    load_mesh(write_text(dir / "bad.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"));
    FAIL() << "expected MeshError";
  } catch (const MeshError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_mesh(write_text(dir / "junk.ply", "not a ply\n")), MeshError);
}

TEST(Normalize, OffsetCube) {
  Mesh cube = shapes::box(Vec3(5, -5, -5), Vec3(15, 5, 5));
  const Mesh n = normalize(cube);
  Vec3 c = Vec3::Zero();
  double maxNorm = 0;
  for (const auto& v : n.vertices) {
    c += v;
    maxNorm = std::max(maxNorm, v.norm());
  }
  c /= static_cast<double>(n.vertex_count());
  EXPECT_LT(c.norm(), 1e-12);
  EXPECT_NEAR(maxNorm, 1.0, 1e-12);
}

TEST(Normalize, IdempotentOnUnitIcosphere) {
  const Mesh once = normalize(shapes::icosphere(2));
  const Mesh twice = normalize(once);
  for (std::size_t i = 0; i < once.vertex_count(); ++i) EXPECT_LT((once.vertices[i] - twice.vertices[i]).norm(), 1e-9);
}

TEST(Normalize, RandomCloudStatistics) {
  std::mt19937 rng(11);
  std::normal_distribution<double> g(3.0, 7.0);
  for (int trial = 0; trial < 10; ++trial) {
    Mesh m;
    for (int i = 0; i < 100; ++i) m.vertices.emplace_back(g(rng), g(rng), g(rng));
    for (std::uint32_t i = 0; i + 2 < 100; i += 3) m.faces.push_back({i, i + 1, i + 2});
    const Mesh n = normalize(m);
    Vec3 c = Vec3::Zero();
    double maxNorm = 0;
    for (const auto& v : n.vertices) c += v;
    c /= 100.0;
    for (const auto& v : n.vertices) maxNorm = std::max(maxNorm, (v - c).norm());
    EXPECT_LT(c.norm(), 1e-12);
    EXPECT_NEAR(maxNorm, 1.0, 1e-12);
  }
}

TEST(Normalize, CoincidentVerticesThrow) {
  Mesh m;
  m.vertices = {Vec3(1, 2, 3), Vec3(1, 2, 3), Vec3(1, 2, 3)};
  m.faces = {{0, 1, 2}};
  EXPECT_THROW(normalize(m), MeshError);
}

TEST(FaceGraph, SharedEdge) {
  Mesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)};
  m.faces = {{0, 1, 2}, {1, 3, 2}};
  const auto g = build_face_graph(m);
  EXPECT_EQ(g.vertexAdjacency[0], std::vector<FaceIndex>{1});
  EXPECT_EQ(g.edgeAdjacency[0], std::vector<FaceIndex>{1});
  EXPECT_EQ(g.vertexAdjacency[1], std::vector<FaceIndex>{0});
  EXPECT_EQ(g.edgeAdjacency[1], std::vector<FaceIndex>{0});
}

TEST(FaceGraph, SharedVertexOnly) {
  Mesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(-1, 0, 0), Vec3(0, -1, 0)};
  m.faces = {{0, 1, 2}, {0, 3, 4}};
  const auto g = build_face_graph(m);
  EXPECT_EQ(g.vertexAdjacency[0], std::vector<FaceIndex>{1});
  EXPECT_TRUE(g.edgeAdjacency[0].empty());
  EXPECT_TRUE(g.edgeAdjacency[1].empty());
}

TEST(FaceGraph, IcosphereEdgeNeighborsMatchPairwiseScan) {
  const Mesh m = shapes::icosphere(1);
  ASSERT_EQ(m.face_count(), 80u);
  const auto g = build_face_graph(m);
  for (FaceIndex f = 0; f < 80; ++f) {
    std::vector<FaceIndex> brute;
    for (FaceIndex h = 0; h < 80; ++h) {
      if (h == f) continue;
      int shared = 0;
      for (auto a : m.faces[f])
        for (auto b : m.faces[h]) shared += a == b;
      if (shared == 2) brute.push_back(h);
    }
    EXPECT_EQ(brute.size(), 3u);
    EXPECT_EQ(g.edgeAdjacency[f], brute);
  }
}

TEST(FaceGraph, RelationsAreSymmetricIrreflexiveAndNested) {
  const Mesh meshes[] = {shapes::icosphere(2), shapes::grid(7), shapes::box(Vec3(-1, -1, -1), Vec3(1, 1, 1), 3),
                         testsupport::humanoid().mesh};
  for (const auto& m : meshes) {
    const auto g = build_face_graph(m);
    for (FaceIndex f = 0; f < m.face_count(); ++f) {
      for (const auto* rel : {&g.vertexAdjacency, &g.edgeAdjacency}) {
        for (auto h : (*rel)[f]) {
          EXPECT_NE(h, f);
          EXPECT_TRUE(std::binary_search((*rel)[h].begin(), (*rel)[h].end(), f));
        }
      }
      EXPECT_LE(g.edgeAdjacency[f].size(), 3u);
      EXPECT_TRUE(std::includes(g.vertexAdjacency[f].begin(), g.vertexAdjacency[f].end(), g.edgeAdjacency[f].begin(),
                                g.edgeAdjacency[f].end()));
    }
  }
}

TEST(QRing, ZeroIsFacePlusVertexNeighbors) {
  const Mesh m = shapes::icosphere(1);
  const auto g = build_face_graph(m);
  for (FaceIndex f : {0u, 17u, 79u}) {
    std::vector<FaceIndex> expected = g.vertexAdjacency[f];
    expected.push_back(f);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(q_ring(g, f, 0), expected);
  }
}

TEST(QRing, IsolatedTriangle) {
  Mesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  m.faces = {{0, 1, 2}};
  const auto g = build_face_graph(m);
  for (int q : {0, 1, 5, 20}) EXPECT_EQ(q_ring(g, 0, q), std::vector<FaceIndex>{0});
}

TEST(QRing, MatchesTruncatedBreadthFirstSearch) {
  const Mesh m = shapes::icosphere(1);
  const auto g = build_face_graph(m);
  auto bfs = [&](FaceIndex src, int maxDepth) {
    std::vector<int> depth(m.face_count(), -1);
    std::queue<FaceIndex> queue;
    depth[src] = 0;
    queue.push(src);
    while (!queue.empty()) {
      const auto f = queue.front();
      queue.pop();
      if (depth[f] == maxDepth) continue;
      for (FaceIndex h = 0; h < m.face_count(); ++h) {
        if (depth[h] >= 0) continue;
        bool share = false;
        for (auto a : m.faces[f])
          for (auto b : m.faces[h]) share |= a == b;
        if (!share) continue;
        depth[h] = depth[f] + 1;
        queue.push(h);
      }
    }
    std::vector<FaceIndex> out;
    for (FaceIndex f = 0; f < m.face_count(); ++f)
      if (depth[f] >= 0) out.push_back(f);
    return out;
  };
  EXPECT_EQ(q_ring(g, 0, 5), bfs(0, 6));
  for (int q = 0; q < 4; ++q) EXPECT_EQ(q_ring(g, 33, q), bfs(33, q + 1));
}

TEST(QRing, MonotoneInQ) {
  const Mesh m = testsupport::humanoid().mesh;
  const auto g = build_face_graph(m);
  std::mt19937 rng(3);
  std::uniform_int_distribution<FaceIndex> pick(0, static_cast<FaceIndex>(m.face_count() - 1));
  for (int trial = 0; trial < 20; ++trial) {
    const FaceIndex f = pick(rng);
    auto prev = q_ring(g, f, 0);
    for (int q = 1; q <= 6; ++q) {
      const auto next = q_ring(g, f, q);
      EXPECT_TRUE(std::includes(next.begin(), next.end(), prev.begin(), prev.end()));
      prev = next;
    }
  }
}

TEST(QRing, WalkerReuseMatchesFreshQueries) {
  const Mesh m = shapes::icosphere(2);
  const auto g = build_face_graph(m);
  RingWalker walker(g);
  for (FaceIndex f = 0; f < m.face_count(); f += 13) {
    auto r = walker.ring(f, 2);
    std::sort(r.begin(), r.end());
    EXPECT_EQ(r, q_ring(g, f, 2));
  }
  EXPECT_THROW(walker.ring(static_cast<FaceIndex>(m.face_count()), 1), MeshError);
}

TEST(MeshMetrics, DiameterAndEdgeLength) {
  const Mesh cube = shapes::box(Vec3(0, 0, 0), Vec3(1, 2, 2));
  EXPECT_NEAR(mesh_diameter(cube), 3.0, 1e-12);
  const Mesh g = shapes::grid(4, 0.5);
  // Each square cell contributes 4 sides of 0.5 and one diagonal; shared edges counted once.
  EXPECT_GT(mean_edge_length(g), 0.5);
  EXPECT_LT(mean_edge_length(g), 0.5 * std::sqrt(2.0));
}
