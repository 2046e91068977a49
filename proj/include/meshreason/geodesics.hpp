#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <queue>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "meshreason/mesh.hpp"

namespace meshreason {

class GeodesicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

struct GeodesicField {
  FaceIndex sourceFace = 0;
  std::vector<double> distance;  // per face; kUnreachable off the source component
  std::size_t clampedFaces = 0;  // faces whose raw heat distance was negative
};

namespace detail {

using SparseMatrix = Eigen::SparseMatrix<double>;

// Symmetric positive-definite solve: Cholesky first, then Cholesky of the
// diagonally shifted matrix, then conjugate gradients.
class SpdSolver {
 public:
  explicit SpdSolver(const SparseMatrix& matrix) : matrix_(matrix) {
    llt_.compute(matrix_);
    if (llt_.info() == Eigen::Success) return;
    const double eps = 1e-9 * matrix_.diagonal().sum() / static_cast<double>(std::max<Eigen::Index>(1, matrix_.rows()));
    SparseMatrix shifted = matrix_;
    for (Eigen::Index i = 0; i < shifted.rows(); ++i) shifted.coeffRef(i, i) += eps;
    llt_.compute(shifted);
    if (llt_.info() == Eigen::Success) return;
    useCg_ = true;
    matrix_ = std::move(shifted);
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    if (!useCg_) {
      Eigen::VectorXd x = llt_.solve(rhs);
      if (llt_.info() != Eigen::Success) throw GeodesicError("sparse Cholesky solve failed");
      return x;
    }
    Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-8);
    cg.compute(matrix_);
    Eigen::VectorXd x = cg.solve(rhs);
    if (cg.info() != Eigen::Success) throw GeodesicError("conjugate gradient did not converge");
    return x;
  }

 private:
  SparseMatrix matrix_;
  Eigen::SimplicialLLT<SparseMatrix> llt_;
  bool useCg_ = false;
};

inline double cotangent(const Vec3& a, const Vec3& b) {
  const double s = a.cross(b).norm();
  return s > 0.0 ? a.dot(b) / s : 0.0;
}

}  // namespace detail

/// Geodesic distances by the heat method. Both operators are factored once at
/// construction; distance() is const and may run concurrently.
class HeatGeodesicSolver {
 public:
  explicit HeatGeodesicSolver(const Mesh& mesh, double timeMultiplier = 1.0) : mesh_(mesh) {
    if (mesh.faces.empty()) throw GeodesicError("heat geodesics: mesh has no faces");
    const auto nv = static_cast<Eigen::Index>(mesh.vertex_count());
    std::vector<Eigen::Triplet<double>> stiffness;
    stiffness.reserve(mesh.face_count() * 12);
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(nv);
    cot_.resize(mesh.face_count());
    for (FaceIndex f = 0; f < mesh.face_count(); ++f) {
      const auto& t = mesh.faces[f];
      const double area = mesh.face_area(f);
      for (int k = 0; k < 3; ++k) {
        const Vec3& p = mesh.corner(f, k);
        const Vec3& pi = mesh.corner(f, (k + 1) % 3);
        const Vec3& pj = mesh.corner(f, (k + 2) % 3);
        const double c = detail::cotangent(pi - p, pj - p);
        cot_[f][k] = c;
        const auto i = static_cast<Eigen::Index>(t[(k + 1) % 3]);
        const auto j = static_cast<Eigen::Index>(t[(k + 2) % 3]);
        stiffness.emplace_back(i, j, -0.5 * c);
        stiffness.emplace_back(j, i, -0.5 * c);
        stiffness.emplace_back(i, i, 0.5 * c);
        stiffness.emplace_back(j, j, 0.5 * c);
        mass(static_cast<Eigen::Index>(t[k])) += area / 3.0;
      }
    }
    detail::SparseMatrix K(nv, nv);
    K.setFromTriplets(stiffness.begin(), stiffness.end());

    const double h = mean_edge_length(mesh);
    time_ = timeMultiplier * h * h;
    detail::SparseMatrix heat = time_ * K;
    for (Eigen::Index i = 0; i < nv; ++i) heat.coeffRef(i, i) += mass(i);
    heat.makeCompressed();
    heatSolver_ = std::make_unique<detail::SpdSolver>(heat);

    // The stiffness matrix is singular (constants per component); a tiny
    // diagonal shift makes it definite without moving the solution beyond
    // the constant we subtract afterwards.
    detail::SparseMatrix poisson = K;
    const double eps = 1e-9 * K.diagonal().sum() / static_cast<double>(std::max<Eigen::Index>(1, nv));
    for (Eigen::Index i = 0; i < nv; ++i) poisson.coeffRef(i, i) += eps;
    poisson.makeCompressed();
    poissonSolver_ = std::make_unique<detail::SpdSolver>(poisson);

    component_ = vertex_components(mesh);
  }

  double heat_time() const { return time_; }

  GeodesicField distance(FaceIndex sourceFace) const {
    const Mesh& mesh = mesh_;
    if (sourceFace >= mesh.face_count()) throw GeodesicError("heat geodesics: source face out of range");
    const auto nv = static_cast<Eigen::Index>(mesh.vertex_count());

    Eigen::VectorXd u0 = Eigen::VectorXd::Zero(nv);
    for (auto v : mesh.faces[sourceFace]) u0(v) = 1.0;
    const Eigen::VectorXd u = heatSolver_->solve(u0);

    // Divergence of the normalized negative gradient, accumulated per vertex.
    Eigen::VectorXd div = Eigen::VectorXd::Zero(nv);
    for (FaceIndex f = 0; f < mesh.face_count(); ++f) {
      const auto& t = mesh.faces[f];
      const Vec3 cross = mesh.face_cross(f);
      const double twiceArea = cross.norm();
      if (twiceArea <= 0.0) continue;
      const Vec3 n = cross / twiceArea;
      Vec3 grad = Vec3::Zero();
      for (int k = 0; k < 3; ++k) {
        const Vec3 opposite = mesh.corner(f, (k + 2) % 3) - mesh.corner(f, (k + 1) % 3);
        grad += u(t[k]) * n.cross(opposite);
      }
      grad /= twiceArea;
      const double len = grad.norm();
      if (!(len > 0.0) || !std::isfinite(len)) continue;
      const Vec3 X = -grad / len;
      for (int k = 0; k < 3; ++k) {
        const int a = (k + 1) % 3;
        const int b = (k + 2) % 3;
        const Vec3 e1 = mesh.corner(f, a) - mesh.corner(f, k);
        const Vec3 e2 = mesh.corner(f, b) - mesh.corner(f, k);
        // cot at b is opposite e1, cot at a is opposite e2.
        div(t[k]) += 0.5 * (cot_[f][b] * e1.dot(X) + cot_[f][a] * e2.dot(X));
      }
    }
    // Stiffness is the negated Laplacian, so K phi = -div.
    const Eigen::VectorXd phi = poissonSolver_->solve(-div);

    const int comp = component_[mesh.faces[sourceFace][0]];
    double shift = std::numeric_limits<double>::infinity();
    for (auto v : mesh.faces[sourceFace]) shift = std::min(shift, phi(v));

    GeodesicField field;
    field.sourceFace = sourceFace;
    field.distance.assign(mesh.face_count(), kUnreachable);
    for (FaceIndex f = 0; f < mesh.face_count(); ++f) {
      const auto& t = mesh.faces[f];
      if (component_[t[0]] != comp) continue;
      const double d = (phi(t[0]) + phi(t[1]) + phi(t[2])) / 3.0 - shift;
      if (d < 0.0) ++field.clampedFaces;
      field.distance[f] = std::max(0.0, d);
    }
    // A face is at distance zero from itself.
    field.distance[sourceFace] = 0.0;
    return field;
  }

  const Mesh& mesh() const { return mesh_; }

 private:
  static std::vector<int> vertex_components(const Mesh& mesh) {
    std::vector<int> parent(mesh.vertex_count());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (const auto& t : mesh.faces) {
      const int a = find(static_cast<int>(t[0]));
      parent[find(static_cast<int>(t[1]))] = a;
      parent[find(static_cast<int>(t[2]))] = a;
    }
    std::vector<int> comp(mesh.vertex_count());
    for (std::size_t v = 0; v < comp.size(); ++v) comp[v] = find(static_cast<int>(v));
    return comp;
  }

  Mesh mesh_;
  double time_ = 0.0;
  std::vector<std::array<double, 3>> cot_;  // cotangent of the angle at each corner
  std::unique_ptr<detail::SpdSolver> heatSolver_;
  std::unique_ptr<detail::SpdSolver> poissonSolver_;
  std::vector<int> component_;
};

/// One-off heat-method distance field from a face.
inline GeodesicField heat_geodesic(const Mesh& mesh, FaceIndex sourceFace, double timeMultiplier = 1.0) {
  if (sourceFace >= mesh.face_count()) throw GeodesicError("heat geodesics: source face out of range");
  return HeatGeodesicSolver(mesh, timeMultiplier).distance(sourceFace);
}

/// Shortest paths on the dual graph: faces are nodes, edge-adjacent faces are
/// linked with weight equal to the distance between centroids.
inline GeodesicField dijkstra_geodesic(const Mesh& mesh, const FaceGraph& graph, FaceIndex sourceFace) {
  if (sourceFace >= mesh.face_count()) throw GeodesicError("dijkstra: source face out of range");
  GeodesicField field;
  field.sourceFace = sourceFace;
  field.distance.assign(mesh.face_count(), kUnreachable);
  using Item = std::pair<double, FaceIndex>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  field.distance[sourceFace] = 0.0;
  heap.emplace(0.0, sourceFace);
  while (!heap.empty()) {
    const auto [d, f] = heap.top();
    heap.pop();
    if (d > field.distance[f]) continue;
    const Vec3 cf = mesh.face_centroid(f);
    for (auto g : graph.edgeAdjacency[f]) {
      const double nd = d + (mesh.face_centroid(g) - cf).norm();
      if (nd < field.distance[g]) {
        field.distance[g] = nd;
        heap.emplace(nd, g);
      }
    }
  }
  return field;
}

inline GeodesicField dijkstra_geodesic(const Mesh& mesh, FaceIndex sourceFace) {
  return dijkstra_geodesic(mesh, build_face_graph(mesh), sourceFace);
}

struct GaussianFit {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Mean and population standard deviation (Welford), with sigma floored at `sigmaFloor`.
inline GaussianFit fit_gaussian(std::span<const double> values, double sigmaFloor = 0.0) {
  if (values.empty()) throw std::invalid_argument("fit_gaussian: no values");
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;
  for (double x : values) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  const double sigma = std::sqrt(std::max(0.0, m2 / static_cast<double>(n)));
  return {mean, std::max(sigma, sigmaFloor)};
}

inline double gaussian_density(double d, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_density: sigma must be positive");
  const double z = (d - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace meshreason
