#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshreason/image.hpp"

namespace meshreason {

using json = nlohmann::json;

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-face category labels for a set of named shapes.
///   { "categories": [...], "shapes": { "<name>": [labelIndex per face] } }
struct GroundTruth {
  std::vector<std::string> categories;
  std::map<std::string, std::vector<int>> shapes;

  void validate() const {
    for (const auto& [name, labels] : shapes) {
      for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= categories.size()) {
          throw EvalError("ground truth: shape '" + name + "' uses label " + std::to_string(l) +
                          " outside the vocabulary");
        }
      }
    }
  }

  int category_index(const std::string& name) const {
    auto lower = [](std::string s) {
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
      return s;
    };
    for (std::size_t i = 0; i < categories.size(); ++i) {
      if (lower(categories[i]) == lower(name)) return static_cast<int>(i);
    }
    return -1;
  }
};

inline GroundTruth parse_ground_truth(const json& doc) {
  GroundTruth gt;
  try {
    gt.categories = doc.at("categories").get<std::vector<std::string>>();
    for (const auto& [name, labels] : doc.at("shapes").items()) gt.shapes[name] = labels.get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw EvalError(std::string("ground truth: ") + e.what());
  }
  gt.validate();
  return gt;
}

inline GroundTruth load_ground_truth(const std::filesystem::path& path) {
  try {
    return parse_ground_truth(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw EvalError("ground truth " + path.string() + ": " + e.what());
  }
}

inline json to_json(const GroundTruth& gt) {
  json shapes = json::object();
  for (const auto& [name, labels] : gt.shapes) shapes[name] = labels;
  return json{{"categories", gt.categories}, {"shapes", shapes}};
}

/// |pred ∩ gt| / |pred ∪ gt| over per-face membership flags; 1 when both are
/// empty. Optional per-face weights give an area-weighted variant.
inline double face_iou(const std::vector<bool>& pred, const std::vector<bool>& gt,
                       const std::vector<double>* weights = nullptr) {
  if (pred.size() != gt.size()) throw EvalError("face_iou: sets are over different meshes");
  double inter = 0.0, uni = 0.0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    const double w = weights ? (*weights)[f] : 1.0;
    if (pred[f] && gt[f]) inter += w;
    if (pred[f] || gt[f]) uni += w;
  }
  return uni > 0.0 ? inter / uni : 1.0;
}

struct EvalReport {
  std::vector<std::string> categories;
  std::vector<double> categoryIoU;                          // percent, rounded to 2 decimals
  std::map<std::string, std::vector<double>> perShapeIoU;  // fraction in [0,1], per category
  std::size_t shapeCount = 0;
  double meanIoU = 0.0;  // percent, mean of categoryIoU
};

/// Per category: IoU averaged over shapes, reported in percent.
/// `faceWeights` (per shape) switches to area-weighted IoU.
inline EvalReport miou_report(const std::map<std::string, std::vector<int>>& predictions, const GroundTruth& gt,
                              const std::map<std::string, std::vector<double>>* faceWeights = nullptr) {
  gt.validate();
  if (predictions.size() != gt.shapes.size()) {
    throw EvalError("miou_report: " + std::to_string(predictions.size()) + " predicted shapes vs " +
                    std::to_string(gt.shapes.size()) + " ground-truth shapes");
  }
  EvalReport report;
  report.categories = gt.categories;
  report.shapeCount = gt.shapes.size();
  const std::size_t nc = gt.categories.size();
  std::vector<double> sums(nc, 0.0);
  for (const auto& [name, truth] : gt.shapes) {
    const auto it = predictions.find(name);
    if (it == predictions.end()) throw EvalError("miou_report: no prediction for shape '" + name + "'");
    const auto& pred = it->second;
    if (pred.size() != truth.size()) {
      throw EvalError("miou_report: shape '" + name + "' has " + std::to_string(pred.size()) +
                      " predicted faces, ground truth has " + std::to_string(truth.size()));
    }
    const std::vector<double>* w = nullptr;
    if (faceWeights) {
      const auto wit = faceWeights->find(name);
      if (wit == faceWeights->end() || wit->second.size() != truth.size()) {
        throw EvalError("miou_report: missing face weights for shape '" + name + "'");
      }
      w = &wit->second;
    }
    auto& row = report.perShapeIoU[name];
    for (std::size_t c = 0; c < nc; ++c) {
      std::vector<bool> p(truth.size()), g(truth.size());
      for (std::size_t f = 0; f < truth.size(); ++f) {
        p[f] = pred[f] == static_cast<int>(c);
        g[f] = truth[f] == static_cast<int>(c);
      }
      row.push_back(face_iou(p, g, w));
      sums[c] += row.back();
    }
  }
  double meanSum = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    const double pct = report.shapeCount ? 100.0 * sums[c] / static_cast<double>(report.shapeCount) : 0.0;
    report.categoryIoU.push_back(std::round(pct * 100.0) / 100.0);
    meanSum += report.categoryIoU.back();
  }
  report.meanIoU = nc ? std::round(meanSum / static_cast<double>(nc) * 100.0) / 100.0 : 0.0;
  return report;
}

inline std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Plain-text table: "Model Backbone <category...>" then one result row.
/// With wrapAfter > 0, categories continue in further blocks of that width.
inline std::string format_table(const EvalReport& report, const std::string& model = "Ours",
                                const std::string& backbone = "", std::size_t wrapAfter = 0) {
  const std::size_t nc = report.categories.size();
  const std::size_t block = wrapAfter ? wrapAfter : std::max<std::size_t>(1, nc);
  std::ostringstream out;
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  const std::size_t modelW = std::max<std::size_t>(8, model.size() + 2);
  const std::size_t backW = std::max<std::size_t>(10, backbone.size() + 2);
  for (std::size_t start = 0; start < std::max<std::size_t>(nc, 1); start += block) {
    const std::size_t end = std::min(nc, start + block);
    std::string header = pad("Model", modelW) + pad("Backbone", backW);
    std::string row = pad(model, modelW) + pad(backbone, backW);
    for (std::size_t c = start; c < end; ++c) {
      const std::size_t w = std::max<std::size_t>(8, report.categories[c].size() + 2);
      header += pad(report.categories[c], w);
      row += pad(format_percent(report.categoryIoU[c]), w);
    }
    while (!header.empty() && header.back() == ' ') header.pop_back();
    while (!row.empty() && row.back() == ' ') row.pop_back();
    out << header << '\n' << row << '\n';
    if (nc == 0) break;
  }
  out << "mIoU " << format_percent(report.meanIoU) << " over " << report.shapeCount << " shape(s)\n";
  return out.str();
}

inline json to_json(const EvalReport& r) {
  json cats = json::object();
  for (std::size_t c = 0; c < r.categories.size(); ++c) cats[r.categories[c]] = r.categoryIoU[c];
  json perShape = json::object();
  for (const auto& [name, row] : r.perShapeIoU) perShape[name] = row;
  return json{{"categories", r.categories},
              {"category_iou", cats},
              {"per_shape_iou", perShape},
              {"shape_count", r.shapeCount},
              {"miou", r.meanIoU}};
}

}  // namespace meshreason
