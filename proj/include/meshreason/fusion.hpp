#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshreason/geodesics.hpp"
#include "meshreason/mesh.hpp"
#include "meshreason/renderer.hpp"
#include "meshreason/seg_backend.hpp"

namespace meshreason {

class FusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FusionConfig {
  double areaDiffThreshold = 0.25;  // T, as a fraction of image area
  int kMax = 3;
  int q = 5;
  int smoothingIterations = 3;
  int minPixelsPerFace = 1;
  double heatTimeMultiplier = 1.0;
  double sigmaFloorFraction = 1e-3;  // sigma floor as a fraction of mesh diameter

  void validate() const {
    if (!(areaDiffThreshold >= 0.0 && areaDiffThreshold <= 1.0)) throw std::invalid_argument("T must lie in [0,1]");
    if (kMax < 1) throw std::invalid_argument("kMax must be >= 1");
    if (q < 0) throw std::invalid_argument("q must be >= 0");
    if (smoothingIterations < 0) throw std::invalid_argument("smoothingIterations must be >= 0");
    if (minPixelsPerFace < 1) throw std::invalid_argument("minPixelsPerFace must be >= 1");
    if (!(heatTimeMultiplier > 0.0)) throw std::invalid_argument("heat time multiplier must be positive");
    if (!(sigmaFloorFraction > 0.0)) throw std::invalid_argument("sigma floor must be positive");
  }
};

inline void to_json(json& j, const FusionConfig& c) {
  j = json{{"T", c.areaDiffThreshold},
           {"k_max", c.kMax},
           {"q", c.q},
           {"smoothing_iterations", c.smoothingIterations},
           {"min_pixels_per_face", c.minPixelsPerFace},
           {"heat_time_multiplier", c.heatTimeMultiplier},
           {"sigma_floor_fraction", c.sigmaFloorFraction}};
}

inline void from_json(const json& j, FusionConfig& c) {
  c.areaDiffThreshold = j.value("T", c.areaDiffThreshold);
  c.kMax = j.value("k_max", c.kMax);
  c.q = j.value("q", c.q);
  c.smoothingIterations = j.value("smoothing_iterations", c.smoothingIterations);
  c.minPixelsPerFace = j.value("min_pixels_per_face", c.minPixelsPerFace);
  c.heatTimeMultiplier = j.value("heat_time_multiplier", c.heatTimeMultiplier);
  c.sigmaFloorFraction = j.value("sigma_floor_fraction", c.sigmaFloorFraction);
}

/// Per-face evidence. `raw` accumulates weight * confidence over covering
/// masks, `visibility` counts covering masks, and `score` = visibility * raw
/// once accumulation is finished.
struct FaceScores {
  std::vector<double> raw;
  std::vector<double> score;
  std::vector<int> visibility;

  FaceScores() = default;
  explicit FaceScores(std::size_t faceCount) : raw(faceCount, 0.0), score(faceCount, 0.0), visibility(faceCount, 0) {}
  std::size_t face_count() const { return score.size(); }
};

/// Faces hit by one kept mask in one view.
struct MaskFaceSet {
  int view = 0;
  int mask = 0;
  std::vector<FaceIndex> faces;         // ascending
  std::vector<std::size_t> pixelCounts;  // parallel to faces
  std::optional<FaceIndex> centralFace;
  double confidence = 0.0;

  bool empty() const { return faces.empty(); }
};

struct Explanation {
  int view = 0;
  int candidate = 0;
  std::string text;
  double confidence = 0.0;
};

struct SkippedView {
  int view = 0;
  std::string reason;
};

struct SegmentationResult {
  std::vector<bool> labels;
  FaceScores scores;
  double threshold = 0.0;
  std::vector<Explanation> explanations;
  FusionConfig config;
  std::vector<SkippedView> skippedViews;
};

/// Backend output for one view; `error` set when the backend failed there.
struct ViewCandidates {
  int viewIndex = 0;
  std::vector<CandidateMask> candidates;
  std::optional<std::string> error;
};

/// View index -> indices into that view's candidate list. A view listed here
/// bypasses top-k filtering and uses exactly the chosen candidates.
using SelectionOverrides = std::map<int, std::vector<int>>;

/// Keeps only the most salient candidate when the top two differ in area by
/// more than T; otherwise keeps up to kMax. Expects confidence-sorted input.
inline std::vector<CandidateMask> filter_topk(const std::vector<CandidateMask>& candidates, const FusionConfig& config) {
  if (candidates.size() < 2) return candidates;
  const double a1 = candidates[0].area_fraction();
  const double a2 = candidates[1].area_fraction();
  const std::size_t k = std::abs(a1 - a2) > config.areaDiffThreshold
                            ? 1
                            : std::min(static_cast<std::size_t>(config.kMax), candidates.size());
  return {candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k)};
}

inline MaskFaceSet mask_faces(const ViewRender& view, const CandidateMask& candidate, const FusionConfig& config,
                              int maskIndex = 0) {
  if (candidate.mask.width != view.width() || candidate.mask.height != view.height()) {
    throw FusionError("mask_faces: mask size does not match view " + std::to_string(view.viewIndex));
  }
  std::map<FaceIndex, std::size_t> hits;
  const BBox& box = candidate.bbox;
  for (int y = std::max(0, box.y0); y < std::min(view.height(), box.y1); ++y) {
    for (int x = std::max(0, box.x0); x < std::min(view.width(), box.x1); ++x) {
      if (!candidate.foreground(x, y)) continue;
      const auto f = view.face_at(x, y);
      if (f != kBackground) ++hits[f];
    }
  }
  MaskFaceSet set;
  set.view = view.viewIndex;
  set.mask = maskIndex;
  set.confidence = candidate.confidence;
  for (const auto& [f, count] : hits) {
    if (count < static_cast<std::size_t>(config.minPixelsPerFace)) continue;
    set.faces.push_back(f);
    set.pixelCounts.push_back(count);
  }
  return set;
}

/// Anchors a mask region: the face under the projection of the area-weighted
/// mean centroid, or the region face nearest to that point when the
/// projection leaves the region.
inline FaceIndex central_face(const Mesh& mesh, const ViewRender& view, const MaskFaceSet& maskFaces) {
  if (maskFaces.faces.empty()) throw FusionError("central_face: empty face set");
  Vec3 sum = Vec3::Zero();
  double totalArea = 0.0;
  for (auto f : maskFaces.faces) {
    const double a = mesh.face_area(f);
    sum += a * mesh.face_centroid(f);
    totalArea += a;
  }
  const Vec3 center = totalArea > 0.0 ? Vec3(sum / totalArea) : mesh.face_centroid(maskFaces.faces.front());
  if (const auto hit = project(view.camera, center)) {
    const auto f = view.face_at(hit->x, hit->y);
    if (std::binary_search(maskFaces.faces.begin(), maskFaces.faces.end(), f)) return f;
  }
  FaceIndex best = maskFaces.faces.front();
  double bestDist = std::numeric_limits<double>::infinity();
  for (auto f : maskFaces.faces) {
    const double d = (mesh.face_centroid(f) - center).squaredNorm();
    if (d < bestDist) {
      bestDist = d;
      best = f;
    }
  }
  return best;
}

/// Gaussian density of each region face's neighborhood-averaged geodesic
/// distance from the central face. Weights are parallel to maskFaces.faces.
/// Faces on a different connected component than the central face get the
/// smallest weight found among reachable faces.
inline std::vector<double> gaussian_reweight(const Mesh& mesh, const FaceGraph& graph,
                                             const HeatGeodesicSolver& solver, const MaskFaceSet& maskFaces, int q,
                                             double sigmaFloor) {
  if (!maskFaces.centralFace) throw FusionError("gaussian_reweight: central face not set");
  const GeodesicField field = solver.distance(*maskFaces.centralFace);
  const std::size_t n = maskFaces.faces.size();

  std::vector<char> inRegion(mesh.face_count(), 0);
  for (auto f : maskFaces.faces) inRegion[f] = 1;

  RingWalker walker(graph);
  std::vector<double> smoothed(n, kUnreachable);
  std::vector<double> finite;
  finite.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(field.distance[maskFaces.faces[i]])) continue;
    double sum = 0.0;
    std::size_t count = 0;
    for (auto g : walker.ring(maskFaces.faces[i], q)) {
      if (!inRegion[g] || !std::isfinite(field.distance[g])) continue;
      sum += field.distance[g];
      ++count;
    }
    smoothed[i] = sum / static_cast<double>(count);
    finite.push_back(smoothed[i]);
  }

  const GaussianFit fit = fit_gaussian(finite, sigmaFloor);
  std::vector<double> weights(n, 0.0);
  double minWeight = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(smoothed[i])) continue;
    weights[i] = gaussian_density(smoothed[i], fit.mu, fit.sigma);
    minWeight = std::min(minWeight, weights[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(smoothed[i])) weights[i] = minWeight;
  }
  return weights;
}

inline void accumulate(FaceScores& scores, const MaskFaceSet& maskFaces, const std::vector<double>& weights) {
  if (weights.size() != maskFaces.faces.size()) throw FusionError("accumulate: weights do not match faces");
  for (std::size_t i = 0; i < maskFaces.faces.size(); ++i) {
    const auto f = maskFaces.faces[i];
    scores.raw[f] += weights[i] * maskFaces.confidence;
    scores.visibility[f] += 1;
  }
}

/// score = visibility * raw, once every mask has been accumulated.
inline void finalize_scores(FaceScores& scores) {
  for (std::size_t f = 0; f < scores.face_count(); ++f) {
    scores.score[f] = static_cast<double>(scores.visibility[f]) * scores.raw[f];
  }
}

/// Averages each score with its edge neighbors, `iterations` times.
inline FaceScores visibility_smooth(const FaceScores& scores, const FaceGraph& graph, int iterations) {
  if (iterations < 0) throw std::invalid_argument("visibility_smooth: negative iteration count");
  FaceScores out = scores;
  std::vector<double> next(out.face_count());
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t f = 0; f < out.face_count(); ++f) {
      double sum = out.score[f];
      for (auto g : graph.edgeAdjacency[f]) sum += out.score[g];
      next[f] = sum / static_cast<double>(1 + graph.edgeAdjacency[f].size());
    }
    out.score.swap(next);
  }
  return out;
}

/// Mean score over every face of the mesh.
inline double global_threshold(const FaceScores& scores) {
  if (scores.face_count() == 0) return 0.0;
  double sum = 0.0;
  for (double s : scores.score) sum += s;
  return sum / static_cast<double>(scores.face_count());
}

/// A face is kept when it carries evidence and its score reaches the mean.
/// The comparison tolerates 1e-12 relative rounding in the mean so equal
/// scores always pass.
inline std::vector<bool> global_filter(const FaceScores& scores) {
  const double theta = global_threshold(scores);
  const double cut = theta - 1e-12 * std::abs(theta);
  std::vector<bool> labels(scores.face_count(), false);
  for (std::size_t f = 0; f < scores.face_count(); ++f) {
    labels[f] = scores.score[f] > 0.0 && scores.score[f] >= cut;
  }
  return labels;
}

namespace detail {

struct MaskContribution {
  MaskFaceSet faces;
  std::vector<double> weights;
};

// Everything fusion needs from a single view; independent across views.
inline std::vector<MaskContribution> process_view(const Mesh& mesh, const FaceGraph& graph,
                                                  const HeatGeodesicSolver& solver, const ViewRender& view,
                                                  const std::vector<CandidateMask>& kept,
                                                  const std::vector<int>& keptIndices, const FusionConfig& config,
                                                  double sigmaFloor) {
  std::vector<MaskContribution> out;
  for (std::size_t j = 0; j < kept.size(); ++j) {
    MaskContribution c;
    c.faces = mask_faces(view, kept[j], config, keptIndices[j]);
    if (c.faces.empty()) continue;
    c.faces.centralFace = central_face(mesh, view, c.faces);
    c.weights = gaussian_reweight(mesh, graph, solver, c.faces, config.q, sigmaFloor);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

/// Lifts per-view candidate masks onto mesh faces and thresholds the fused
/// scores. Views are processed concurrently; contributions are summed in
/// (view, mask) order so the result does not depend on the input order.
inline SegmentationResult fuse(const Mesh& mesh, const FaceGraph& graph, const HeatGeodesicSolver& solver,
                               const std::vector<ViewRender>& views, const std::vector<ViewCandidates>& perView,
                               const FusionConfig& config, const SelectionOverrides& selections = {}) {
  config.validate();
  if (views.size() != perView.size()) throw FusionError("fuse: views and candidate lists are not aligned");
  SegmentationResult result;
  result.config = config;

  struct Work {
    std::size_t slot;
    std::vector<CandidateMask> kept;
    std::vector<int> keptIndices;
  };
  std::vector<Work> work;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& vc = perView[i];
    if (vc.viewIndex != views[i].viewIndex) throw FusionError("fuse: view index mismatch at position " + std::to_string(i));
    if (vc.error) {
      result.skippedViews.push_back({vc.viewIndex, *vc.error});
      continue;
    }
    Work w{i, {}, {}};
    if (const auto it = selections.find(vc.viewIndex); it != selections.end()) {
      std::vector<int> chosen = it->second;
      std::sort(chosen.begin(), chosen.end());
      chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
      for (int idx : chosen) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= vc.candidates.size()) {
          throw FusionError("fuse: selection index " + std::to_string(idx) + " invalid for view " +
                            std::to_string(vc.viewIndex));
        }
        w.kept.push_back(vc.candidates[static_cast<std::size_t>(idx)]);
        w.keptIndices.push_back(idx);
      }
    } else {
      w.kept = filter_topk(vc.candidates, config);
      for (std::size_t j = 0; j < w.kept.size(); ++j) w.keptIndices.push_back(static_cast<int>(j));
    }
    work.push_back(std::move(w));
  }
  if (!views.empty() && work.empty()) throw FusionError("fuse: every view failed upstream");

  const double sigmaFloor = config.sigmaFloorFraction * mesh_diameter(mesh);
  std::vector<std::future<std::vector<detail::MaskContribution>>> futures;
  for (const auto& w : work) {
    futures.push_back(std::async(std::launch::async, [&, slot = w.slot] {
      return detail::process_view(mesh, graph, solver, views[slot], w.kept, w.keptIndices, config, sigmaFloor);
    }));
  }
  std::vector<detail::MaskContribution> contributions;
  for (auto& fut : futures) {
    auto part = fut.get();
    for (auto& c : part) contributions.push_back(std::move(c));
  }
  std::sort(contributions.begin(), contributions.end(), [](const auto& a, const auto& b) {
    return std::tie(a.faces.view, a.faces.mask) < std::tie(b.faces.view, b.faces.mask);
  });

  FaceScores scores(mesh.face_count());
  for (const auto& c : contributions) accumulate(scores, c.faces, c.weights);
  finalize_scores(scores);
  result.scores = visibility_smooth(scores, graph, config.smoothingIterations);
  result.threshold = global_threshold(result.scores);
  result.labels = global_filter(result.scores);

  for (const auto& w : work) {
    for (std::size_t j = 0; j < w.kept.size(); ++j) {
      result.explanations.push_back(
          {views[w.slot].viewIndex, w.keptIndices[j], w.kept[j].answerText, w.kept[j].confidence});
    }
  }
  std::sort(result.explanations.begin(), result.explanations.end(),
            [](const auto& a, const auto& b) { return std::tie(a.view, a.candidate) < std::tie(b.view, b.candidate); });
  std::sort(result.skippedViews.begin(), result.skippedViews.end(),
            [](const auto& a, const auto& b) { return a.view < b.view; });
  return result;
}

inline constexpr int kUnassigned = -1;

/// Per-face category: the highest-scoring category among those whose global
/// filter accepts the face; ties go to the lower category index; faces no
/// category accepts are kUnassigned.
inline std::vector<int> multi_query_label(const std::vector<FaceScores>& perCategory) {
  if (perCategory.empty()) throw std::invalid_argument("multi_query_label: no categories");
  const std::size_t nf = perCategory.front().face_count();
  std::vector<std::vector<bool>> accepted;
  for (const auto& s : perCategory) {
    if (s.face_count() != nf) throw std::invalid_argument("multi_query_label: face counts differ");
    accepted.push_back(global_filter(s));
  }
  std::vector<int> labels(nf, kUnassigned);
  for (std::size_t f = 0; f < nf; ++f) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < perCategory.size(); ++c) {
      if (!accepted[c][f]) continue;
      if (perCategory[c].score[f] > best) {
        best = perCategory[c].score[f];
        labels[f] = static_cast<int>(c);
      }
    }
  }
  return labels;
}

// --- serialization ----------------------------------------------------------

inline json explanations_json(const std::vector<Explanation>& explanations) {
  json out = json::array();
  for (const auto& e : explanations) {
    out.push_back({{"view", e.view}, {"candidate", e.candidate}, {"text", e.text}, {"confidence", e.confidence}});
  }
  return out;
}

inline json skipped_json(const std::vector<SkippedView>& skipped) {
  json out = json::array();
  for (const auto& s : skipped) out.push_back({{"view", s.view}, {"error", s.reason}});
  return out;
}

inline json to_json(const SegmentationResult& r) {
  json labels = json::array();
  for (bool b : r.labels) labels.push_back(b);
  return json{{"labels", labels},
              {"score", r.scores.score},
              {"visibility", r.scores.visibility},
              {"threshold", r.threshold},
              {"explanations", explanations_json(r.explanations)},
              {"config", r.config},
              {"skipped_views", skipped_json(r.skippedViews)}};
}

/// ASCII PLY with per-face color: labeled faces red, others gray.
inline void write_colored_ply(const std::filesystem::path& path, const Mesh& mesh, const std::vector<bool>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << mesh.vertex_count() << "\nproperty float x\nproperty float y\nproperty float z\n"
      << "element face " << mesh.face_count() << "\nproperty list uchar int vertex_indices\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  out.precision(9);
  for (const auto& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (FaceIndex f = 0; f < mesh.face_count(); ++f) {
    const auto& t = mesh.faces[f];
    const bool on = f < labels.size() && labels[f];
    out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << (on ? " 255 0 0\n" : " 128 128 128\n");
  }
}

}  // namespace meshreason
