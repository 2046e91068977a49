#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <future>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshreason/eval.hpp"
#include "meshreason/fusion.hpp"
#include "meshreason/geodesics.hpp"
#include "meshreason/image.hpp"
#include "meshreason/mesh.hpp"
#include "meshreason/renderer.hpp"
#include "meshreason/seg_backend.hpp"

namespace meshreason {

namespace fs = std::filesystem;

struct PipelineConfig {
  int views = 8;
  int width = 1024;
  int height = 1024;
  double fovDegrees = 50.0;
  double distance = 2.2;
  double elevationDegrees = 0.0;
  int maxCandidates = 3;
  FusionConfig fusion;

  void validate() const {
    if (views < 1) throw std::invalid_argument("views must be >= 1");
    if (width < 1 || height < 1) throw std::invalid_argument("resolution must be positive");
    if (!(fovDegrees > 0.0 && fovDegrees < 180.0)) throw std::invalid_argument("fov must lie in (0,180)");
    if (!(distance > 1.0)) throw std::invalid_argument("camera distance must exceed 1");
    if (maxCandidates < 1) throw std::invalid_argument("max candidates must be >= 1");
    fusion.validate();
  }
};

inline void to_json(json& j, const PipelineConfig& c) {
  j = json{{"views", c.views},
           {"width", c.width},
           {"height", c.height},
           {"fov_degrees", c.fovDegrees},
           {"distance", c.distance},
           {"elevation_degrees", c.elevationDegrees},
           {"max_candidates", c.maxCandidates},
           {"fusion", c.fusion}};
}

/// Overlays the keys present in `j` onto `c`; absent keys keep their value.
inline void from_json(const json& j, PipelineConfig& c) {
  c.views = j.value("views", c.views);
  if (j.contains("res")) c.width = c.height = j["res"].get<int>();
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.fovDegrees = j.value("fov_degrees", c.fovDegrees);
  c.distance = j.value("distance", c.distance);
  c.elevationDegrees = j.value("elevation_degrees", c.elevationDegrees);
  c.maxCandidates = j.value("max_candidates", c.maxCandidates);
  if (j.contains("fusion")) {
    FusionConfig f = c.fusion;
    from_json(j["fusion"], f);
    c.fusion = f;
  }
}

inline constexpr const char* kBackendEnv = "MESHREASON_BACKEND";

/// Backend from a spec string: "http:<url>", "fixture:<dir>" or
/// "oracle:<gt.json>:<label>" (empty label = use the query text as label).
/// The oracle picks the GT shape named after the mesh file stem, or the only
/// shape when there is one.
inline std::unique_ptr<SegBackend> make_backend(const std::string& spec, const fs::path& meshPath,
                                                std::size_t faceCount) {
  if (spec.rfind("http:", 0) == 0) return std::make_unique<HttpBackend>(spec.substr(5));
  if (spec.rfind("fixture:", 0) == 0) return std::make_unique<FixtureBackend>(spec.substr(8));
  if (spec.rfind("oracle:", 0) == 0) {
    const std::string rest = spec.substr(7);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("oracle backend needs oracle:<gt.json>:<label>");
    const GroundTruth gt = load_ground_truth(rest.substr(0, colon));
    const std::string label = rest.substr(colon + 1);
    const std::vector<int>* labels = nullptr;
    if (const auto it = gt.shapes.find(meshPath.stem().string()); it != gt.shapes.end()) labels = &it->second;
    else if (gt.shapes.size() == 1) labels = &gt.shapes.begin()->second;
    if (!labels) throw std::invalid_argument("oracle backend: no ground-truth shape named " + meshPath.stem().string());
    if (labels->size() != faceCount) {
      throw std::invalid_argument("oracle backend: ground truth has " + std::to_string(labels->size()) +
                                  " faces, mesh has " + std::to_string(faceCount));
    }
    return std::make_unique<OracleBackend>(*labels, gt.categories, label);
  }
  throw std::invalid_argument("unknown backend '" + spec + "' (expected http:, fixture: or oracle:)");
}

/// A normalized mesh with its derived structures and rendered views.
struct Scene {
  Mesh mesh;
  FaceGraph graph;
  std::unique_ptr<HeatGeodesicSolver> solver;
  std::vector<ViewRender> views;
  LoadStats loadStats;
};

inline std::vector<ViewRender> render_views(const Mesh& mesh, const PipelineConfig& config) {
  const auto cams = make_view_ring(config.views, config.width, config.height, config.distance, config.fovDegrees,
                                   config.elevationDegrees);
  std::vector<std::future<ViewRender>> jobs;
  for (int i = 0; i < config.views; ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] { return rasterize(mesh, cams[static_cast<std::size_t>(i)], i); }));
  }
  std::vector<ViewRender> views;
  for (auto& j : jobs) views.push_back(j.get());
  return views;
}

inline Scene prepare_scene(Mesh mesh, const PipelineConfig& config, bool withSolver = true) {
  config.validate();
  Scene scene;
  scene.mesh = normalize(mesh);
  scene.graph = build_face_graph(scene.mesh);
  if (withSolver) scene.solver = std::make_unique<HeatGeodesicSolver>(scene.mesh, config.fusion.heatTimeMultiplier);
  scene.views = render_views(scene.mesh, config);
  return scene;
}

inline Scene load_scene(const fs::path& meshPath, const PipelineConfig& config, bool withSolver = true) {
  LoadStats stats;
  Mesh raw = load_mesh(meshPath, &stats);
  Scene scene = prepare_scene(std::move(raw), config, withSolver);
  scene.loadStats = stats;
  return scene;
}

/// Queries the backend once per view; failures are captured per view.
inline std::vector<ViewCandidates> segment_views(const SegBackend& backend, const std::vector<ViewRender>& views,
                                                 const SegQuery& query) {
  query.validate();
  std::vector<std::future<ViewCandidates>> jobs;
  for (const auto& view : views) {
    jobs.push_back(std::async(std::launch::async, [&backend, &view, &query] {
      ViewCandidates vc;
      vc.viewIndex = view.viewIndex;
      try {
        vc.candidates = backend.segment(view, query);
      } catch (const std::exception& e) {
        vc.error = e.what();
      }
      return vc;
    }));
  }
  std::vector<ViewCandidates> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct QueryOutcome {
  std::string query;
  std::vector<ViewCandidates> candidates;
  SegmentationResult result;
};

/// Output of one segment run over one or more queries.
struct SegmentRun {
  std::vector<QueryOutcome> queries;
  std::vector<int> categoryLabels;  // multi-query only; kUnassigned where no category applies
};

inline SegmentRun run_queries(const Scene& scene, const SegBackend& backend, const std::vector<std::string>& queries,
                              const PipelineConfig& config) {
  if (queries.empty()) throw std::invalid_argument("at least one query is required");
  SegmentRun run;
  for (const auto& text : queries) {
    QueryOutcome q;
    q.query = text;
    q.candidates = segment_views(backend, scene.views, SegQuery{text, config.maxCandidates});
    q.result = fuse(scene.mesh, scene.graph, *scene.solver, scene.views, q.candidates, config.fusion);
    run.queries.push_back(std::move(q));
  }
  if (queries.size() > 1) {
    std::vector<FaceScores> perCategory;
    for (const auto& q : run.queries) perCategory.push_back(q.result.scores);
    run.categoryLabels = multi_query_label(perCategory);
  }
  return run;
}

/// Re-fuses one query with user-chosen candidates for some views, reusing
/// the rendered views and the backend answers already collected.
inline SegmentationResult refuse_with_selection(const Scene& scene, const std::vector<ViewCandidates>& candidates,
                                                const SelectionOverrides& selections, const FusionConfig& config) {
  for (const auto& [view, chosen] : selections) {
    const auto it = std::find_if(candidates.begin(), candidates.end(),
                                 [view = view](const ViewCandidates& vc) { return vc.viewIndex == view; });
    if (it == candidates.end()) throw FusionError("selection names unknown view " + std::to_string(view));
    for (int idx : chosen) {
      if (idx < 0 || static_cast<std::size_t>(idx) >= it->candidates.size()) {
        throw FusionError("selection index " + std::to_string(idx) + " invalid for view " + std::to_string(view));
      }
    }
  }
  return fuse(scene.mesh, scene.graph, *scene.solver, scene.views, candidates, config, selections);
}

inline std::string candidate_file(int view, int candidate) {
  return std::to_string(view) + "_" + std::to_string(candidate) + ".png";
}

inline json query_json(const QueryOutcome& q) {
  json j = to_json(q.result);
  j["query"] = q.query;
  return j;
}

/// result.json document. Everything except "timestamp" is a pure function of
/// the inputs.
inline json result_document(const SegmentRun& run, const PipelineConfig& config, const std::string& backend,
                            const std::string& meshName, std::size_t faceCount) {
  json doc;
  if (run.queries.size() == 1) {
    doc = query_json(run.queries.front());
  } else {
    json labels = json::array();
    for (int l : run.categoryLabels) labels.push_back(l);
    json perQuery = json::array();
    for (const auto& q : run.queries) perQuery.push_back(query_json(q));
    json categories = json::array();
    for (const auto& q : run.queries) categories.push_back(q.query);
    doc = json{{"labels", labels}, {"categories", categories}, {"per_query", perQuery}};
  }
  doc["config"] = config;
  doc["backend"] = backend;
  doc["mesh"] = json{{"file", meshName}, {"faces", faceCount}};
  doc["timestamp"] = utc_timestamp();
  return doc;
}

inline void write_views(const fs::path& outDir, const std::vector<ViewRender>& views, bool faceIds) {
  fs::create_directories(outDir / "views");
  for (const auto& v : views) {
    write_png(outDir / "views" / (std::to_string(v.viewIndex) + ".png"), v.color);
    if (faceIds) write_file(outDir / "views" / (std::to_string(v.viewIndex) + "_faceid.bin"), encode_face_ids(v));
  }
}

inline void write_candidates(const fs::path& dir, const std::vector<ViewCandidates>& perView) {
  fs::create_directories(dir);
  for (const auto& vc : perView) {
    for (std::size_t j = 0; j < vc.candidates.size(); ++j) {
      write_png(dir / candidate_file(vc.viewIndex, static_cast<int>(j)), vc.candidates[j].mask);
    }
  }
}

/// Per-face labels for the colored export: boolean for one query, "assigned
/// to any category" for several.
inline std::vector<bool> export_labels(const SegmentRun& run) {
  if (run.queries.size() == 1) return run.queries.front().result.labels;
  std::vector<bool> out;
  for (int l : run.categoryLabels) out.push_back(l != kUnassigned);
  return out;
}

/// Writes views/, candidates/, result.json and segmented.ply under outDir.
inline json write_run(const fs::path& outDir, const Scene& scene, const SegmentRun& run,
                      const PipelineConfig& config, const std::string& backend, const std::string& meshName,
                      bool faceIds = false) {
  fs::create_directories(outDir);
  write_views(outDir, scene.views, faceIds);
  if (run.queries.size() == 1) {
    write_candidates(outDir / "candidates", run.queries.front().candidates);
  } else {
    for (std::size_t k = 0; k < run.queries.size(); ++k) {
      write_candidates(outDir / "candidates" / ("q" + std::to_string(k)), run.queries[k].candidates);
    }
  }
  json doc = result_document(run, config, backend, meshName, scene.mesh.face_count());
  write_file(outDir / "result.json", doc.dump(2) + "\n");
  write_colored_ply(outDir / "segmented.ply", scene.mesh, export_labels(run));
  return doc;
}

/// Predicted category labels from a result.json, mapped onto the GT vocabulary.
inline std::vector<int> prediction_labels(const json& result, const GroundTruth& gt) {
  const auto& labels = result.at("labels");
  std::vector<int> out;
  if (result.contains("categories")) {
    std::vector<int> remap;
    for (const auto& name : result["categories"]) {
      const int idx = gt.category_index(name.get<std::string>());
      if (idx < 0) throw EvalError("prediction category '" + name.get<std::string>() + "' not in ground truth");
      remap.push_back(idx);
    }
    for (const auto& l : labels) {
      const int v = l.get<int>();
      out.push_back(v >= 0 && static_cast<std::size_t>(v) < remap.size() ? remap[static_cast<std::size_t>(v)] : -1);
    }
    return out;
  }
  for (const auto& l : labels) {
    if (l.is_boolean()) throw EvalError("single-query result without categories cannot be scored per category");
    out.push_back(l.get<int>());
  }
  return out;
}

/// Reads every prediction in predDir: either <shape>.json or <shape>/result.json.
inline std::map<std::string, std::vector<int>> load_predictions(const fs::path& predDir, const GroundTruth& gt) {
  if (!fs::is_directory(predDir)) throw EvalError("prediction directory not found: " + predDir.string());
  std::map<std::string, std::vector<int>> preds;
  for (const auto& entry : fs::directory_iterator(predDir)) {
    fs::path file;
    std::string name;
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      file = entry.path();
      name = entry.path().stem().string();
    } else if (entry.is_directory() && fs::exists(entry.path() / "result.json")) {
      file = entry.path() / "result.json";
      name = entry.path().filename().string();
    } else {
      continue;
    }
    try {
      preds[name] = prediction_labels(json::parse(read_file(file)), gt);
    } catch (const json::exception& e) {
      throw EvalError("prediction " + file.string() + ": " + e.what());
    }
  }
  if (preds.empty()) throw EvalError("no predictions found in " + predDir.string());
  return preds;
}

}  // namespace meshreason
