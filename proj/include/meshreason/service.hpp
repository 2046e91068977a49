#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "meshreason/pipeline.hpp"

namespace meshreason {

enum class JobState { rendering, segmenting, fusing, done, failed };

inline const char* to_string(JobState s) {
  switch (s) {
    case JobState::rendering: return "rendering";
    case JobState::segmenting: return "segmenting";
    case JobState::fusing: return "fusing";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

inline JobState job_state_from(const std::string& s) {
  if (s == "done") return JobState::done;
  if (s == "failed") return JobState::failed;
  if (s == "fusing") return JobState::fusing;
  if (s == "segmenting") return JobState::segmenting;
  return JobState::rendering;
}

class JobNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class JobConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Job {
  std::string id;
  fs::path dir;
  fs::path meshPath;
  std::string query;
  PipelineConfig config;
  JobState state = JobState::rendering;
  std::optional<std::string> error;
  int viewCount = 0;
  std::vector<ViewCandidates> candidates;
  SelectionOverrides selections;
  bool refusePending = false;
  std::shared_ptr<const Scene> scene;
};

inline SelectionOverrides parse_selections(const json& body) {
  if (!body.is_object() || !body.contains("selections") || !body["selections"].is_object()) {
    throw std::invalid_argument("body must be {\"selections\": {\"<view>\": [indices]}}");
  }
  SelectionOverrides out;
  for (const auto& [key, value] : body["selections"].items()) {
    std::size_t used = 0;
    int view = 0;
    try {
      view = std::stoi(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size()) throw std::invalid_argument("selection key '" + key + "' is not a view index");
    out[view] = value.get<std::vector<int>>();
  }
  return out;
}

inline json selections_json(const SelectionOverrides& s) {
  json out = json::object();
  for (const auto& [view, chosen] : s) out[std::to_string(view)] = chosen;
  return out;
}

/// Background job runner. Jobs execute one at a time on a single worker
/// thread; each job parallelizes across its views. Artifacts live under
/// <root>/<id>/ in the same layout the CLI writes.
class JobManager {
 public:
  JobManager(fs::path root, std::string backendSpec, bool persist = false)
      : root_(std::move(root)), backendSpec_(std::move(backendSpec)), persist_(persist) {
    fs::create_directories(root_);
    if (persist_) reload();
    worker_ = std::thread([this] { run(); });
  }

  ~JobManager() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  std::string submit(const std::string& meshBytes, const std::string& fileName, const std::string& query,
                     const json& configOverrides = json::object()) {
    if (query.empty()) throw std::invalid_argument("query must not be empty");
    std::string ext = fs::path(fileName).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".obj" && ext != ".ply") throw std::invalid_argument("mesh file must be .obj or .ply");
    PipelineConfig config;
    from_json(configOverrides, config);
    config.validate();

    auto job = std::make_shared<Job>();
    job->id = new_id();
    job->dir = root_ / job->id;
    fs::create_directories(job->dir);
    job->meshPath = job->dir / ("input" + ext);
    write_file(job->meshPath, meshBytes);
    job->query = query;
    job->config = config;
    {
      std::lock_guard lock(mutex_);
      jobs_[job->id] = job;
      save_locked(*job);
      queue_.push_back(job->id);
    }
    cv_.notify_all();
    return job->id;
  }

  /// Consistent snapshot of the job's public state.
  json status(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const Job& job = find_locked(id);
    json views = json::array();
    const std::string base = "/api/jobs/" + id;
    for (int i = 0; i < job.viewCount; ++i) {
      json v{{"index", i}, {"imageUrl", base + "/views/" + std::to_string(i) + ".png"}, {"candidates", json::array()}};
      if (static_cast<std::size_t>(i) < job.candidates.size()) {
        const auto& vc = job.candidates[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < vc.candidates.size(); ++j) {
          v["candidates"].push_back({{"index", j},
                                     {"confidence", vc.candidates[j].confidence},
                                     {"text", vc.candidates[j].answerText},
                                     {"maskUrl", base + "/masks/" + std::to_string(i) + "/" + std::to_string(j) + ".png"}});
        }
        if (vc.error) v["error"] = *vc.error;
      }
      views.push_back(std::move(v));
    }
    json out{{"id", id}, {"state", to_string(job.state)}, {"query", job.query}, {"views", views},
             {"selections", selections_json(job.selections)}};
    if (job.error) out["error"] = *job.error;
    return out;
  }

  JobState state(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return find_locked(id).state;
  }

  fs::path artifact(const std::string& id, const fs::path& relative) const {
    std::lock_guard lock(mutex_);
    return find_locked(id).dir / relative;
  }

  /// result.json plus the mesh payload for the viewer.
  json result(const std::string& id) const {
    fs::path dir;
    {
      std::lock_guard lock(mutex_);
      const Job& job = find_locked(id);
      if (job.state != JobState::done) throw JobConflict(std::string("job is ") + to_string(job.state));
      dir = job.dir;
    }
    json doc = json::parse(read_file(dir / "result.json"));
    LoadStats stats;
    const Mesh mesh = normalize(load_mesh(dir / meshFileName(dir), &stats));
    json vertices = json::array();
    for (const auto& v : mesh.vertices) vertices.push_back({v.x(), v.y(), v.z()});
    json faces = json::array();
    for (const auto& t : mesh.faces) faces.push_back({t[0], t[1], t[2]});
    doc["mesh"] = json{{"vertices", vertices}, {"faces", faces}, {"labels", doc["labels"]}};
    return doc;
  }

  /// Stores the selection and queues a re-fuse. Selections posted while the
  /// job is fusing take effect after the current fusion finishes.
  void select(const std::string& id, const SelectionOverrides& selections) {
    {
      std::lock_guard lock(mutex_);
      Job& job = find_locked(id);
      if (job.state == JobState::rendering || job.state == JobState::segmenting) {
        throw JobConflict("job has not finished segmenting");
      }
      if (job.state == JobState::failed) throw JobConflict("job failed: " + job.error.value_or(""));
      for (const auto& [view, chosen] : selections) {
        if (view < 0 || static_cast<std::size_t>(view) >= job.candidates.size()) {
          throw std::invalid_argument("selection names unknown view " + std::to_string(view));
        }
        for (int idx : chosen) {
          if (idx < 0 || static_cast<std::size_t>(idx) >= job.candidates[static_cast<std::size_t>(view)].candidates.size()) {
            throw std::invalid_argument("selection index " + std::to_string(idx) + " invalid for view " +
                                        std::to_string(view));
          }
        }
      }
      job.selections = selections;
      if (job.state == JobState::fusing) {
        job.refusePending = true;
        return;
      }
      job.state = JobState::fusing;
      save_locked(job);
      queue_.push_back(id);
    }
    cv_.notify_all();
  }

  /// Blocks until the job reaches done or failed with no re-fuse pending.
  JobState wait(const std::string& id, std::chrono::milliseconds timeout = std::chrono::minutes(5)) const {
    std::unique_lock lock(mutex_);
    const Job& job = find_locked(id);
    doneCv_.wait_for(lock, timeout, [&] {
      return (job.state == JobState::done || job.state == JobState::failed) && !job.refusePending &&
             std::find(queue_.begin(), queue_.end(), id) == queue_.end();
    });
    return job.state;
  }

 private:
  static std::string new_id() {
    static std::mutex m;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lock(m);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
    return buf;
  }

  static std::string meshFileName(const fs::path& dir) {
    return fs::exists(dir / "input.ply") ? "input.ply" : "input.obj";
  }

  Job& find_locked(const std::string& id) const {
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw JobNotFound("unknown job " + id);
    return *it->second;
  }

  void save_locked(const Job& job) const {
    json cands = json::array();
    for (const auto& vc : job.candidates) {
      json list = json::array();
      for (const auto& c : vc.candidates) list.push_back({{"confidence", c.confidence}, {"text", c.answerText}});
      json v{{"view", vc.viewIndex}, {"candidates", list}};
      if (vc.error) v["error"] = *vc.error;
      cands.push_back(std::move(v));
    }
    json doc{{"id", job.id},
             {"query", job.query},
             {"state", to_string(job.state)},
             {"config", job.config},
             {"view_count", job.viewCount},
             {"candidates", cands},
             {"selections", selections_json(job.selections)},
             {"mesh", job.meshPath.filename().string()}};
    if (job.error) doc["error"] = *job.error;
    write_file(job.dir / "job.json", doc.dump(2));
  }

  void set_state(Job& job, JobState s) {
    std::lock_guard lock(mutex_);
    job.state = s;
    save_locked(job);
  }

  void reload() {
    for (const auto& entry : fs::directory_iterator(root_)) {
      const auto meta = entry.path() / "job.json";
      if (!entry.is_directory() || !fs::exists(meta)) continue;
      try {
        const json doc = json::parse(read_file(meta));
        auto job = std::make_shared<Job>();
        job->id = doc.at("id").get<std::string>();
        job->dir = entry.path();
        job->meshPath = entry.path() / doc.at("mesh").get<std::string>();
        job->query = doc.at("query").get<std::string>();
        from_json(doc.at("config"), job->config);
        job->state = job_state_from(doc.at("state").get<std::string>());
        if (job->state != JobState::done && job->state != JobState::failed) {
          job->state = JobState::failed;
          job->error = "interrupted by service restart";
        }
        if (job->state == JobState::done && !fs::exists(entry.path() / "result.json")) continue;
        if (doc.contains("error")) job->error = doc["error"].get<std::string>();
        job->viewCount = doc.value("view_count", 0);
        for (const auto& v : doc.value("candidates", json::array())) {
          ViewCandidates vc;
          vc.viewIndex = v.at("view").get<int>();
          if (v.contains("error")) vc.error = v["error"].get<std::string>();
          const auto& list = v.at("candidates");
          for (std::size_t j = 0; j < list.size(); ++j) {
            CandidateMask c;
            c.mask = read_png_gray(job->dir / "candidates" / candidate_file(vc.viewIndex, static_cast<int>(j)));
            c.confidence = list[j].at("confidence").get<double>();
            c.answerText = list[j].at("text").get<std::string>();
            c.bbox = tight_bbox(c.mask);
            vc.candidates.push_back(std::move(c));
          }
          job->candidates.push_back(std::move(vc));
        }
        job->selections = parse_selections(json{{"selections", doc.value("selections", json::object())}});
        jobs_[job->id] = job;
      } catch (const std::exception&) {
        continue;
      }
    }
  }

  void run() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
      }
      std::shared_ptr<Job> job;
      {
        std::lock_guard lock(mutex_);
        job = jobs_.at(id);
      }
      if (job->state == JobState::fusing) refuse(*job);
      else execute(*job);
      doneCv_.notify_all();
    }
  }

  void fail(Job& job, const std::string& message) {
    std::lock_guard lock(mutex_);
    job.state = JobState::failed;
    job.error = message;
    job.refusePending = false;
    save_locked(job);
  }

  void execute(Job& job) {
    try {
      auto scene = std::make_shared<Scene>(load_scene(job.meshPath, job.config));
      write_views(job.dir, scene->views, false);
      {
        std::lock_guard lock(mutex_);
        job.scene = scene;
        job.viewCount = static_cast<int>(scene->views.size());
      }
      set_state(job, JobState::segmenting);
      const auto backend = make_backend(backendSpec_, job.meshPath, scene->mesh.face_count());
      auto candidates = segment_views(*backend, scene->views, SegQuery{job.query, job.config.maxCandidates});
      write_candidates(job.dir / "candidates", candidates);
      {
        std::lock_guard lock(mutex_);
        job.candidates = std::move(candidates);
      }
      set_state(job, JobState::fusing);
      fuse_and_store(job, backend->describe());
    } catch (const std::exception& e) {
      fail(job, e.what());
    }
  }

  void refuse(Job& job) {
    try {
      if (!job.scene) {
        auto scene = std::make_shared<Scene>(load_scene(job.meshPath, job.config));
        std::lock_guard lock(mutex_);
        job.scene = scene;
      }
      fuse_and_store(job, backendSpec_);
    } catch (const std::exception& e) {
      fail(job, e.what());
    }
  }

  void fuse_and_store(Job& job, const std::string& backendName) {
    for (;;) {
      SelectionOverrides selections;
      std::vector<ViewCandidates> candidates;
      {
        std::lock_guard lock(mutex_);
        selections = job.selections;
        candidates = job.candidates;
        job.refusePending = false;
      }
      SegmentRun run;
      QueryOutcome q;
      q.query = job.query;
      q.candidates = candidates;
      q.result = refuse_with_selection(*job.scene, candidates, selections, job.config.fusion);
      run.queries.push_back(std::move(q));
      json doc = result_document(run, job.config, backendName, job.meshPath.filename().string(),
                                 job.scene->mesh.face_count());
      doc["selections"] = selections_json(selections);
      write_file(job.dir / "result.json", doc.dump(2) + "\n");
      write_colored_ply(job.dir / "segmented.ply", job.scene->mesh, run.queries.front().result.labels);
      std::lock_guard lock(mutex_);
      if (job.refusePending) continue;
      job.state = JobState::done;
      save_locked(job);
      return;
    }
  }

  fs::path root_;
  std::string backendSpec_;
  bool persist_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  mutable std::condition_variable doneCv_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::thread worker_;
};

/// Installs the job API routes on `server`.
inline void install_routes(httplib::Server& server, JobManager& jobs) {
  auto send_json = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto guarded = [send_json](auto handler) {
    return [handler, send_json](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const JobNotFound& e) {
        send_json(res, 404, {{"error", e.what()}});
      } catch (const JobConflict& e) {
        send_json(res, 409, {{"error", e.what()}});
      } catch (const std::invalid_argument& e) {
        send_json(res, 400, {{"error", e.what()}});
      } catch (const json::exception& e) {
        send_json(res, 400, {{"error", e.what()}});
      } catch (const std::exception& e) {
        send_json(res, 500, {{"error", e.what()}});
      }
    };
  };
  auto send_file = [](httplib::Response& res, const fs::path& path) {
    if (!fs::exists(path)) {
      res.status = 404;
      res.set_content(json{{"error", "not found"}}.dump(), "application/json");
      return;
    }
    res.set_content(read_file(path), "image/png");
  };

  server.Post("/api/jobs", guarded([&jobs, send_json](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_file("mesh")) throw std::invalid_argument("multipart field 'mesh' is required");
    if (!req.has_file("query")) throw std::invalid_argument("multipart field 'query' is required");
    const auto mesh = req.get_file_value("mesh");
    json config = json::object();
    if (req.has_file("config")) {
      const auto text = req.get_file_value("config").content;
      if (!text.empty()) config = json::parse(text);
    }
    const std::string id = jobs.submit(mesh.content, mesh.filename.empty() ? "mesh.obj" : mesh.filename,
                                       req.get_file_value("query").content, config);
    send_json(res, 202, {{"id", id}});
  }));
  server.Get(R"(/api/jobs/([0-9a-zA-Z]+))", guarded([&jobs, send_json](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, jobs.status(req.matches[1]));
  }));
  server.Get(R"(/api/jobs/([0-9a-zA-Z]+)/views/(\d+)\.png)",
             guarded([&jobs, send_file](const httplib::Request& req, httplib::Response& res) {
               send_file(res, jobs.artifact(req.matches[1], fs::path("views") / (req.matches[2].str() + ".png")));
             }));
  server.Get(R"(/api/jobs/([0-9a-zA-Z]+)/masks/(\d+)/(\d+)\.png)",
             guarded([&jobs, send_file](const httplib::Request& req, httplib::Response& res) {
               const int view = std::stoi(req.matches[2]);
               const int cand = std::stoi(req.matches[3]);
               send_file(res, jobs.artifact(req.matches[1], fs::path("candidates") / candidate_file(view, cand)));
             }));
  server.Post(R"(/api/jobs/([0-9a-zA-Z]+)/selection)",
              guarded([&jobs, send_json](const httplib::Request& req, httplib::Response& res) {
                jobs.select(req.matches[1], parse_selections(json::parse(req.body)));
                send_json(res, 202, {{"id", req.matches[1].str()}});
              }));
  server.Get(R"(/api/jobs/([0-9a-zA-Z]+)/result)",
             guarded([&jobs, send_json](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, jobs.result(req.matches[1]));
             }));
}

}  // namespace meshreason
