#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "meshreason/pipeline.hpp"
#include "meshreason/service.hpp"

namespace mr = meshreason;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigFlags {
  std::string configFile;
  int views = 0;
  int res = 0;
  double fov = 0, distance = 0, elevation = 0;
  int maxCandidates = 0;
  double T = 0;
  int kMax = 0, q = 0, smoothing = 0, minPixels = 0;
  double heatTime = 0;
  std::vector<CLI::Option*> opts;

  void add_render(CLI::App* app) {
    app->add_option("--config", configFile, "JSON config file")->check(CLI::ExistingFile);
    opts.push_back(app->add_option("--views", views, "number of views [8]"));
    opts.push_back(app->add_option("--res", res, "square render resolution [1024]"));
    opts.push_back(app->add_option("--fov", fov, "vertical field of view, degrees [50]"));
    opts.push_back(app->add_option("--distance", distance, "camera distance [2.2]"));
    opts.push_back(app->add_option("--elevation", elevation, "camera elevation, degrees [0]"));
  }

  void add_fusion(CLI::App* app) {
    opts.push_back(app->add_option("--max-candidates", maxCandidates, "candidates requested per view [3]"));
    opts.push_back(app->add_option("--T", T, "area-difference threshold [0.25]"));
    opts.push_back(app->add_option("--kmax", kMax, "max masks kept per view [3]"));
    opts.push_back(app->add_option("--q", q, "neighborhood rank [5]"));
    opts.push_back(app->add_option("--smoothing", smoothing, "visibility smoothing iterations [3]"));
    opts.push_back(app->add_option("--min-pixels", minPixels, "pixels for a face to count as covered [1]"));
    opts.push_back(app->add_option("--heat-time", heatTime, "heat time multiplier [1]"));
  }

  static bool given(const CLI::App& app, const char* name) {
    try {
      return app.get_option(name)->count() > 0;
    } catch (const CLI::OptionNotFound&) {
      return false;
    }
  }

  mr::PipelineConfig resolve(const CLI::App& app) const {
    mr::PipelineConfig c;
    if (!configFile.empty()) {
      try {
        from_json(mr::json::parse(mr::read_file(configFile)), c);
      } catch (const mr::json::exception& e) {
        throw UsageError("config " + configFile + ": " + e.what());
      }
    }
    if (given(app, "--views")) c.views = views;
    if (given(app, "--res")) c.width = c.height = res;
    if (given(app, "--fov")) c.fovDegrees = fov;
    if (given(app, "--distance")) c.distance = distance;
    if (given(app, "--elevation")) c.elevationDegrees = elevation;
    if (given(app, "--max-candidates")) c.maxCandidates = maxCandidates;
    if (given(app, "--T")) c.fusion.areaDiffThreshold = T;
    if (given(app, "--kmax")) c.fusion.kMax = kMax;
    if (given(app, "--q")) c.fusion.q = q;
    if (given(app, "--smoothing")) c.fusion.smoothingIterations = smoothing;
    if (given(app, "--min-pixels")) c.fusion.minPixelsPerFace = minPixels;
    if (given(app, "--heat-time")) c.fusion.heatTimeMultiplier = heatTime;
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

mr::Scene open_scene(const std::string& meshPath, const mr::PipelineConfig& config, bool withSolver) {
  if (!mr::fs::exists(meshPath)) throw UsageError("mesh file not found: " + meshPath);
  try {
    return mr::load_scene(meshPath, config, withSolver);
  } catch (const mr::MeshError& e) {
    throw UsageError("cannot load mesh " + meshPath + ": " + e.what());
  }
}

std::string backend_spec(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(mr::kBackendEnv)) return env;
  throw UsageError(std::string("no backend: pass --backend or set ") + mr::kBackendEnv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view reasoning segmentation of triangle meshes"};
  app.require_subcommand(1);

  auto* render = app.add_subcommand("render", "render the view ring of a mesh");
  std::string meshPath, outDir = "out";
  bool faceIds = false;
  ConfigFlags renderFlags;
  render->add_option("--mesh", meshPath, "OBJ or PLY mesh")->required();
  render->add_option("--out", outDir, "output directory");
  render->add_flag("--face-ids", faceIds, "also write raw face-id buffers");
  renderFlags.add_render(render);

  auto* segment = app.add_subcommand("segment", "segment a mesh with a text query");
  std::vector<std::string> queries;
  std::string backendFlag;
  std::string selectionFile;
  ConfigFlags segFlags;
  segment->add_option("--mesh", meshPath, "OBJ or PLY mesh")->required();
  segment->add_option("--query", queries, "query text; repeat for one category per query")->required();
  segment->add_option("--out", outDir, "output directory");
  segment->add_option("--backend", backendFlag, "http:<url> | fixture:<dir> | oracle:<gt.json>:<label>");
  segment->add_option("--selection", selectionFile, "JSON {\"selections\": {view: [candidates]}}")
      ->check(CLI::ExistingFile);
  segment->add_flag("--face-ids", faceIds, "also write raw face-id buffers");
  segFlags.add_render(segment);
  segFlags.add_fusion(segment);

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  std::string predDir, gtPath, model = "Ours", backbone;
  std::size_t wrap = 0;
  eval->add_option("--pred", predDir, "directory of result.json files")->required();
  eval->add_option("--gt", gtPath, "ground-truth JSON")->required();
  eval->add_option("--out", outDir, "directory for report.txt and report.json");
  eval->add_option("--model", model, "model name in the table");
  eval->add_option("--backbone", backbone, "backbone name in the table");
  eval->add_option("--wrap", wrap, "categories per table block (0 = one block)");

  auto* serve = app.add_subcommand("serve", "run the job HTTP service");
  std::string host = "127.0.0.1", jobsDir = "jobs";
  int port = 8080;
  bool persist = false;
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port");
  serve->add_option("--backend", backendFlag, "segmentation backend spec");
  serve->add_option("--jobs-dir", jobsDir, "job artifact directory");
  serve->add_flag("--persist", persist, "reload finished jobs from --jobs-dir at startup");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (render->parsed()) {
      const auto config = renderFlags.resolve(*render);
      const auto scene = open_scene(meshPath, config, false);
      mr::write_views(outDir, scene.views, faceIds);
      mr::write_file(mr::fs::path(outDir) / "config.json", mr::json(config).dump(2) + "\n");
      std::cout << "wrote " << scene.views.size() << " views to " << outDir << "\n";
      return 0;
    }

    if (segment->parsed()) {
      const auto config = segFlags.resolve(*segment);
      const std::string spec = backend_spec(backendFlag);
      const auto scene = open_scene(meshPath, config, true);
      std::unique_ptr<mr::SegBackend> backend;
      try {
        backend = mr::make_backend(spec, meshPath, scene.mesh.face_count());
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      } catch (const mr::EvalError& e) {
        throw UsageError(e.what());
      }
      mr::SegmentRun run = mr::run_queries(scene, *backend, queries, config);
      if (!selectionFile.empty()) {
        if (queries.size() != 1) throw UsageError("--selection applies to a single query");
        const auto selections = mr::parse_selections(mr::json::parse(mr::read_file(selectionFile)));
        auto& q = run.queries.front();
        q.result = mr::refuse_with_selection(scene, q.candidates, selections, config.fusion);
      }
      for (const auto& q : run.queries) {
        for (const auto& s : q.result.skippedViews) std::cerr << "warning: view " << s.view << " skipped: " << s.reason << "\n";
      }
      const mr::fs::path meshName = mr::fs::path(meshPath).filename();
      mr::write_run(outDir, scene, run, config, backend->describe(), meshName.string(), faceIds);
      std::size_t labeled = 0;
      for (bool b : mr::export_labels(run)) labeled += b;
      std::cout << "labeled " << labeled << " of " << scene.mesh.face_count() << " faces; wrote " << outDir << "\n";
      return 0;
    }

    if (eval->parsed()) {
      if (!mr::fs::exists(gtPath)) throw UsageError("ground truth not found: " + gtPath);
      const auto gt = mr::load_ground_truth(gtPath);
      std::map<std::string, std::vector<int>> preds;
      try {
        preds = mr::load_predictions(predDir, gt);
      } catch (const mr::EvalError& e) {
        throw UsageError(e.what());
      }
      const auto report = mr::miou_report(preds, gt);
      const std::string table = mr::format_table(report, model, backbone, wrap);
      std::cout << table;
      mr::fs::create_directories(outDir);
      mr::write_file(mr::fs::path(outDir) / "report.txt", table);
      mr::write_file(mr::fs::path(outDir) / "report.json", mr::to_json(report).dump(2) + "\n");
      return 0;
    }

    if (serve->parsed()) {
      mr::JobManager jobs(jobsDir, backend_spec(backendFlag), persist);
      httplib::Server server;
      server.set_payload_max_length(256u << 20);
      mr::install_routes(server, jobs);
      if (!server.bind_to_port(host, port)) {
        std::cerr << "error: cannot bind " << host << ":" << port << "\n";
        return kExitFailure;
      }
      std::cout << "listening on http://" << host << ":" << port << "\n" << std::flush;
      server.listen_after_bind();
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
