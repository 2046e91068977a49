#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <memory>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <json.hpp>

#include "meshreason/image.hpp"
#include "meshreason/renderer.hpp"

// resolv.h defines _res, which clashes with Eigen parameter names.
#include <httplib.h>

namespace meshreason {

using json = nlohmann::json;

/// Raised by a backend for one view; the pipeline records the view as
/// skipped and continues with the others.
class BackendError : public std::runtime_error {
 public:
  BackendError(int viewIndex, const std::string& what)
      : std::runtime_error("view " + std::to_string(viewIndex) + ": " + what), viewIndex_(viewIndex) {}
  int view_index() const { return viewIndex_; }

 private:
  int viewIndex_;
};

struct SegQuery {
  std::string text;
  int maxCandidates = 3;

  void validate() const {
    if (text.empty()) throw std::invalid_argument("query text must not be empty");
    if (maxCandidates < 1) throw std::invalid_argument("maxCandidates must be >= 1");
  }
};

// Inclusive-exclusive pixel rectangle.
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool contains(const BBox& o) const { return o.empty() || (o.x0 >= x0 && o.y0 >= y0 && o.x1 <= x1 && o.y1 <= y1); }
  bool operator==(const BBox&) const = default;
};

struct CandidateMask {
  GrayImage mask;  // 255 foreground, 0 background
  double confidence = 0.0;
  std::string answerText;
  BBox bbox;

  bool foreground(int x, int y) const { return *mask.at(x, y) >= 128; }

  std::size_t foreground_count() const {
    return static_cast<std::size_t>(std::count_if(mask.data.begin(), mask.data.end(), [](auto v) { return v >= 128; }));
  }

  double area_fraction() const {
    return mask.pixel_count() ? static_cast<double>(foreground_count()) / static_cast<double>(mask.pixel_count()) : 0.0;
  }
};

/// Tight bounding rectangle of foreground pixels; empty box for an empty mask.
inline BBox tight_bbox(const GrayImage& mask) {
  BBox box{mask.width, mask.height, 0, 0};
  bool any = false;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (*mask.at(x, y) < 128) continue;
      any = true;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x + 1);
      box.y1 = std::max(box.y1, y + 1);
    }
  }
  return any ? box : BBox{};
}

/// Boundary normalization applied to every backend's output: binarizes masks,
/// checks dimensions and confidence range, drops zero-confidence candidates,
/// computes or verifies-and-tightens boxes, sorts by confidence (stable) and
/// truncates to maxCandidates.
inline std::vector<CandidateMask> finalize_candidates(std::vector<CandidateMask> raw, const std::vector<bool>& hasBox,
                                                      int width, int height, int maxCandidates, int viewIndex) {
  std::vector<CandidateMask> out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto& c = raw[i];
    const std::string where = "candidate " + std::to_string(i);
    if (c.mask.width != width || c.mask.height != height) {
      throw BackendError(viewIndex, where + ": mask is " + std::to_string(c.mask.width) + "x" +
                                        std::to_string(c.mask.height) + ", view is " + std::to_string(width) + "x" +
                                        std::to_string(height));
    }
    if (!(c.confidence >= 0.0 && c.confidence <= 1.0)) {
      throw BackendError(viewIndex, where + ": field 'confidence' out of [0,1]: " + std::to_string(c.confidence));
    }
    for (auto& v : c.mask.data) v = v >= 128 ? 255 : 0;
    const BBox tight = tight_bbox(c.mask);
    if (i < hasBox.size() && hasBox[i] && !c.bbox.contains(tight)) {
      throw BackendError(viewIndex, where + ": field 'bbox' does not contain the mask foreground");
    }
    c.bbox = tight;
    if (c.confidence == 0.0) continue;
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const CandidateMask& a, const CandidateMask& b) { return a.confidence > b.confidence; });
  if (out.size() > static_cast<std::size_t>(maxCandidates)) out.resize(static_cast<std::size_t>(maxCandidates));
  return out;
}

class SegBackend {
 public:
  virtual ~SegBackend() = default;
  /// Candidates for one rendered view, sorted by confidence descending.
  virtual std::vector<CandidateMask> segment(const ViewRender& view, const SegQuery& query) const = 0;
  virtual std::string describe() const = 0;
};

/// Replays masks recorded on disk. Directory layout:
///   manifest.json: [ { "view": i, "candidates": [ { "mask_png", "confidence", "text" } ] } ]
class FixtureBackend final : public SegBackend {
 public:
  explicit FixtureBackend(std::filesystem::path dir) : dir_(std::move(dir)) {
    const auto manifestPath = dir_ / "manifest.json";
    if (!std::filesystem::exists(manifestPath)) {
      throw std::runtime_error("fixture: missing manifest " + manifestPath.string());
    }
    try {
      manifest_ = json::parse(read_file(manifestPath));
    } catch (const json::exception& e) {
      throw std::runtime_error("fixture: malformed manifest: " + std::string(e.what()));
    }
    if (!manifest_.is_array()) throw std::runtime_error("fixture: manifest must be a JSON array");
  }

  std::vector<CandidateMask> segment(const ViewRender& view, const SegQuery& query) const override {
    query.validate();
    std::vector<CandidateMask> raw;
    try {
      for (const auto& entry : manifest_) {
        if (entry.at("view").get<int>() != view.viewIndex) continue;
        for (const auto& c : entry.at("candidates")) {
          CandidateMask m;
          m.mask = read_png_gray(dir_ / c.at("mask_png").get<std::string>());
          m.confidence = c.at("confidence").get<double>();
          m.answerText = c.value("text", std::string{});
          raw.push_back(std::move(m));
        }
      }
    } catch (const json::exception& e) {
      throw BackendError(view.viewIndex, "malformed fixture entry: " + std::string(e.what()));
    } catch (const ImageError& e) {
      throw BackendError(view.viewIndex, "fixture mask: " + std::string(e.what()));
    }
    return finalize_candidates(std::move(raw), {}, view.width(), view.height(), query.maxCandidates, view.viewIndex);
  }

  std::string describe() const override { return "fixture:" + dir_.string(); }

 private:
  std::filesystem::path dir_;
  json manifest_;
};

/// Ground-truth test double: masks exactly the visible faces carrying the
/// target label. An empty target label means "use the query text".
class OracleBackend final : public SegBackend {
 public:
  OracleBackend(std::vector<int> faceLabels, std::vector<std::string> vocabulary, std::string targetLabel)
      : faceLabels_(std::move(faceLabels)), vocabulary_(std::move(vocabulary)), target_(std::move(targetLabel)) {}

  std::vector<CandidateMask> segment(const ViewRender& view, const SegQuery& query) const override {
    query.validate();
    const std::string label = target_.empty() ? query.text : target_;
    const int labelIndex = find_label(label);
    if (labelIndex < 0) return {};
    CandidateMask m;
    m.mask = GrayImage(view.width(), view.height(), 0);
    bool any = false;
    for (std::size_t p = 0; p < view.faceId.size(); ++p) {
      const auto f = view.faceId[p];
      if (f == kBackground || f >= faceLabels_.size()) continue;
      if (faceLabels_[f] == labelIndex) {
        m.mask.data[p] = 255;
        any = true;
      }
    }
    if (!any) return {};
    m.confidence = 1.0;
    m.answerText = vocabulary_[static_cast<std::size_t>(labelIndex)];
    std::vector<CandidateMask> raw;
    raw.push_back(std::move(m));
    return finalize_candidates(std::move(raw), {}, view.width(), view.height(), query.maxCandidates, view.viewIndex);
  }

  std::string describe() const override { return "oracle:" + (target_.empty() ? std::string("<query>") : target_); }

 private:
  int find_label(const std::string& label) const {
    auto lower = [](std::string s) {
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
      return s;
    };
    const std::string want = lower(label);
    for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
      if (lower(vocabulary_[i]) == want) return static_cast<int>(i);
    }
    return -1;
  }

  std::vector<int> faceLabels_;
  std::vector<std::string> vocabulary_;
  std::string target_;
};

// --- v1 wire protocol -------------------------------------------------------

inline json make_segment_request(const RgbImage& image, const SegQuery& query) {
  return json{{"image_png_base64", base64_encode(encode_png(image))},
              {"query", query.text},
              {"max_candidates", query.maxCandidates}};
}

/// Decodes and validates a /v1/segment response body. Throws BackendError
/// naming the offending field on any protocol violation.
inline std::vector<CandidateMask> parse_segment_response(const std::string& body, int width, int height,
                                                         int maxCandidates, int viewIndex) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception&) {
    throw BackendError(viewIndex, "protocol violation: response is not JSON");
  }
  if (!doc.is_object() || !doc.contains("candidates") || !doc["candidates"].is_array()) {
    throw BackendError(viewIndex, "protocol violation: missing field 'candidates'");
  }
  std::vector<CandidateMask> raw;
  std::vector<bool> hasBox;
  std::size_t i = 0;
  for (const auto& c : doc["candidates"]) {
    const std::string where = "protocol violation: candidates[" + std::to_string(i++) + "]";
    if (!c.is_object()) throw BackendError(viewIndex, where + " is not an object");
    if (!c.contains("mask_png_base64") || !c["mask_png_base64"].is_string()) {
      throw BackendError(viewIndex, where + ": missing field 'mask_png_base64'");
    }
    if (!c.contains("confidence") || !c["confidence"].is_number()) {
      throw BackendError(viewIndex, where + ": missing field 'confidence'");
    }
    if (!c.contains("text") || !c["text"].is_string()) throw BackendError(viewIndex, where + ": missing field 'text'");
    CandidateMask m;
    m.confidence = c["confidence"].get<double>();
    if (!(m.confidence >= 0.0 && m.confidence <= 1.0)) {
      throw BackendError(viewIndex, where + ": field 'confidence' out of [0,1]: " + c["confidence"].dump());
    }
    m.answerText = c["text"].get<std::string>();
    try {
      m.mask = decode_png_gray(base64_decode(c["mask_png_base64"].get<std::string>()));
    } catch (const ImageError& e) {
      throw BackendError(viewIndex, where + ": field 'mask_png_base64': " + e.what());
    }
    bool boxed = false;
    if (c.contains("bbox") && !c["bbox"].is_null()) {
      const auto& b = c["bbox"];
      if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const json& v) { return v.is_number_integer(); })) {
        throw BackendError(viewIndex, where + ": field 'bbox' must be [x0,y0,x1,y1]");
      }
      m.bbox = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
      boxed = true;
    }
    raw.push_back(std::move(m));
    hasBox.push_back(boxed);
  }
  return finalize_candidates(std::move(raw), hasBox, width, height, maxCandidates, viewIndex);
}

/// Client for a remote reasoning-segmentation service speaking the v1 protocol.
class HttpBackend final : public SegBackend {
 public:
  HttpBackend(std::string baseUrl, std::chrono::milliseconds timeout = std::chrono::seconds(120), int retries = 2,
              int maxConnections = 4)
      : timeout_(timeout), retries_(retries), slots_(std::clamp(maxConnections, 1, 64)) {
    // Split "http://host:port/prefix" into the origin and a path prefix.
    const auto scheme = baseUrl.find("://");
    if (scheme == std::string::npos || baseUrl.substr(0, scheme) != "http") {
      throw std::invalid_argument("http backend: base URL must start with http:// : " + baseUrl);
    }
    const auto pathStart = baseUrl.find('/', scheme + 3);
    origin_ = baseUrl.substr(0, pathStart);
    prefix_ = pathStart == std::string::npos ? "" : baseUrl.substr(pathStart);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (origin_.size() <= scheme + 3) throw std::invalid_argument("http backend: base URL has no host: " + baseUrl);
  }

  std::vector<CandidateMask> segment(const ViewRender& view, const SegQuery& query) const override {
    query.validate();
    const std::string body = make_segment_request(view.color, query).dump();
    std::string lastError = "no attempt made";
    for (int attempt = 0; attempt <= retries_; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 * attempt));
      slots_.acquire();
      httplib::Result res = [&] {
        httplib::Client client(origin_);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        return client.Post(prefix_ + "/v1/segment", body, "application/json");
      }();
      slots_.release();
      if (!res) {
        lastError = "request failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        lastError = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw BackendError(view.viewIndex, "HTTP " + std::to_string(res->status) + ": " + res->body);
      }
      return parse_segment_response(res->body, view.width(), view.height(), query.maxCandidates, view.viewIndex);
    }
    throw BackendError(view.viewIndex, "backend unreachable after " + std::to_string(retries_ + 1) +
                                           " attempts (" + lastError + ")");
  }

  std::string describe() const override { return "http:" + origin_ + prefix_; }

 private:
  std::string origin_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
  int retries_;
  mutable std::counting_semaphore<64> slots_;
};

}  // namespace meshreason
