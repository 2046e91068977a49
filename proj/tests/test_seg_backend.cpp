#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "meshreason/seg_backend.hpp"
#include "meshreason/shapes.hpp"
#include "support.hpp"

using namespace meshreason;
namespace fs = std::filesystem;

namespace {

ViewRender blank_view(int w, int h, int index = 0) {
  ViewRender v;
  v.viewIndex = index;
  v.camera.width = w;
  v.camera.height = h;
  v.color = RgbImage(w, h, 0);
  v.faceId.assign(static_cast<std::size_t>(w) * h, kBackground);
  v.depth.assign(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());
  return v;
}

GrayImage rect_mask(int w, int h, int x0, int y0, int x1, int y1, std::uint8_t value = 255) {
  GrayImage m(w, h, 0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) *m.at(x, y) = value;
  return m;
}

std::string png_b64(const GrayImage& m) { return base64_encode(encode_png(m)); }

void expect_foreground_in_bbox(const CandidateMask& c) {
  for (int y = 0; y < c.mask.height; ++y)
    for (int x = 0; x < c.mask.width; ++x)
      if (c.foreground(x, y)) {
        EXPECT_TRUE(c.bbox.contains(x, y));
      }
}

// Local stand-in for a remote segmentation service.
class MockServer {
 public:
  explicit MockServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/segment", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::atomic<int> hits{0};

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(FinalizeCandidates, SortsTightensAndDropsZeroConfidence) {
  std::vector<CandidateMask> raw(3);
  raw[0].mask = rect_mask(20, 10, 2, 3, 5, 6, 200);
  raw[0].confidence = 0.4;
  raw[1].mask = rect_mask(20, 10, 0, 0, 1, 1);
  raw[1].confidence = 0.0;
  raw[2].mask = rect_mask(20, 10, 10, 1, 12, 9, 127);
  raw[2].confidence = 0.9;
  const auto out = finalize_candidates(raw, {}, 20, 10, 5, 0);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].confidence, 0.9);
  EXPECT_TRUE(out[0].bbox.empty());  // every pixel of that mask is below 128
  EXPECT_EQ(out[0].foreground_count(), 0u);
  EXPECT_EQ(out[1].confidence, 0.4);
  EXPECT_EQ(out[1].bbox, (BBox{2, 3, 5, 6}));
  EXPECT_EQ(*out[1].mask.at(2, 3), 255);
}

TEST(FinalizeCandidates, RejectsBadInput) {
  std::vector<CandidateMask> raw(1);
  raw[0].mask = rect_mask(8, 8, 1, 1, 4, 4);
  raw[0].confidence = 1.3;
  try {
    finalize_candidates(raw, {}, 8, 8, 3, 2);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("confidence"), std::string::npos);
    EXPECT_EQ(e.view_index(), 2);
  }
  raw[0].confidence = 0.5;
  EXPECT_THROW(finalize_candidates(raw, {}, 9, 8, 3, 0), BackendError);
  raw[0].bbox = {2, 2, 4, 4};
  EXPECT_THROW(finalize_candidates(raw, {true}, 8, 8, 3, 0), BackendError);
  raw[0].bbox = {0, 0, 8, 8};
  EXPECT_EQ(finalize_candidates(raw, {true}, 8, 8, 3, 0).front().bbox, (BBox{1, 1, 4, 4}));
}

TEST(FixtureBackend, EchoesManifestForView) {
  const auto dir = testsupport::temp_dir("fixture_echo");
  write_png(dir / "a.png", rect_mask(16, 16, 0, 0, 8, 8));
  write_png(dir / "b.png", rect_mask(16, 16, 4, 4, 12, 12));
  write_file(dir / "manifest.json", R"([{"view": 0, "candidates": [
      {"mask_png": "a.png", "confidence": 0.3, "text": "left"},
      {"mask_png": "b.png", "confidence": 0.8, "text": "middle"}]}])");
  const FixtureBackend backend(dir);
  const auto out = backend.segment(blank_view(16, 16, 0), SegQuery{"anything", 5});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].confidence, 0.8);
  EXPECT_EQ(out[0].answerText, "middle");
  EXPECT_EQ(out[1].confidence, 0.3);
  EXPECT_EQ(out[0].bbox, (BBox{4, 4, 12, 12}));
  EXPECT_TRUE(backend.segment(blank_view(16, 16, 1), SegQuery{"anything"}).empty());
  EXPECT_THROW(backend.segment(blank_view(8, 8, 0), SegQuery{"anything"}), BackendError);
  EXPECT_THROW(FixtureBackend(dir / "nope"), std::runtime_error);
}

TEST(FixtureBackend, RandomManifestsAreSortedBoxedAndDeterministic) {
  std::mt19937 rng(21);
  std::uniform_int_distribution<int> coord(0, 23);
  std::uniform_real_distribution<double> conf(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto dir = testsupport::temp_dir("fixture_rand");
    json cands = json::array();
    const int n = 1 + trial % 5;
    for (int j = 0; j < n; ++j) {
      int x0 = coord(rng), x1 = coord(rng), y0 = coord(rng), y1 = coord(rng);
      if (x0 > x1) std::swap(x0, x1);
      if (y0 > y1) std::swap(y0, y1);
      const std::string name = std::to_string(j) + ".png";
      write_png(dir / name, rect_mask(24, 24, x0, y0, x1 + 1, y1 + 1));
      cands.push_back({{"mask_png", name}, {"confidence", std::round(conf(rng) * 10) / 10}, {"text", name}});
    }
    write_file(dir / "manifest.json", json::array({{{"view", 0}, {"candidates", cands}}}).dump());
    const FixtureBackend backend(dir);
    const auto a = backend.segment(blank_view(24, 24), SegQuery{"q", 10});
    const auto b = backend.segment(blank_view(24, 24), SegQuery{"q", 10});
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (i + 1 < a.size()) {
        EXPECT_GE(a[i].confidence, a[i + 1].confidence);
      }
      EXPECT_GT(a[i].confidence, 0.0);
      expect_foreground_in_bbox(a[i]);
      EXPECT_EQ(a[i].mask, b[i].mask);
      EXPECT_EQ(a[i].confidence, b[i].confidence);
      EXPECT_EQ(a[i].answerText, b[i].answerText);
    }
  }
}

TEST(OracleBackend, MaskIsExactlyTargetPixels) {
  const auto sphere = testsupport::hemisphere_sphere();
  const auto view = rasterize(sphere.mesh, make_view_ring(1, 96, 96, 2.2, 50)[0]);
  const OracleBackend backend(sphere.labels, sphere.categories, "top");
  const auto out = backend.segment(view, SegQuery{"what is on top?"});
  ASSERT_EQ(out.size(), 1u);
  std::size_t fg = 0;
  for (std::size_t p = 0; p < view.faceId.size(); ++p) {
    const auto f = view.faceId[p];
    const bool expected = f != kBackground && sphere.labels[f] == 0;
    EXPECT_EQ(out[0].mask.data[p] >= 128, expected);
    fg += expected;
  }
  std::size_t fromHistogram = 0;
  for (const auto& [f, n] : visible_faces(view))
    if (sphere.labels[f] == 0) fromHistogram += n;
  EXPECT_EQ(out[0].foreground_count(), fromHistogram);
  EXPECT_EQ(out[0].foreground_count(), fg);
  EXPECT_EQ(out[0].confidence, 1.0);
  EXPECT_EQ(out[0].answerText, "top");
  expect_foreground_in_bbox(out[0]);
}

TEST(OracleBackend, EmptyWhenLabelAbsentOrHidden) {
  const auto sphere = testsupport::hemisphere_sphere();
  const auto view = rasterize(sphere.mesh, make_view_ring(1, 64, 64, 2.2, 50)[0]);
  EXPECT_TRUE(OracleBackend(sphere.labels, sphere.categories, "wheel").segment(view, SegQuery{"x"}).empty());

  // A small "head" box hidden behind a large one.
  Mesh m = shapes::box(Vec3(-0.8, -0.8, 0.0), Vec3(0.8, 0.8, 0.2), 1);
  const FaceIndex hidden = shapes::append(m, shapes::box(Vec3(-0.1, -0.1, -0.6), Vec3(0.1, 0.1, -0.4), 1));
  std::vector<int> labels(m.face_count(), 0);
  for (FaceIndex f = hidden; f < m.face_count(); ++f) labels[f] = 1;
  const auto front = rasterize(m, make_view_ring(1, 64, 64, 2.2, 50)[0]);
  EXPECT_TRUE(OracleBackend(labels, {"body", "head"}, "head").segment(front, SegQuery{"head"}).empty());
  // Empty target label falls back to the query text, case-insensitively.
  EXPECT_EQ(OracleBackend(labels, {"body", "head"}, "").segment(front, SegQuery{"BODY"}).size(), 1u);
}

TEST(WireProtocol, RequestShape) {
  const RgbImage img(4, 3, 9);
  const auto req = make_segment_request(img, SegQuery{"the seat", 2});
  EXPECT_EQ(req["query"], "the seat");
  EXPECT_EQ(req["max_candidates"], 2);
  const auto decoded = decode_png_rgb(base64_decode(req["image_png_base64"].get<std::string>()));
  EXPECT_EQ(decoded, img);
}

TEST(WireProtocol, ConfidenceOutOfRangeIsProtocolViolation) {
  const json body{{"candidates", {{{"mask_png_base64", png_b64(rect_mask(4, 4, 0, 0, 2, 2))}, {"confidence", 1.3}, {"text", "x"}}}}};
  try {
    parse_segment_response(body.dump(), 4, 4, 3, 5);
    FAIL();
  } catch (const BackendError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("protocol violation"), std::string::npos);
    EXPECT_NE(what.find("confidence"), std::string::npos);
    EXPECT_EQ(e.view_index(), 5);
  }
}

TEST(WireProtocol, EmptyCandidatesIsSuccess) {
  EXPECT_TRUE(parse_segment_response(R"({"candidates": []})", 4, 4, 3, 0).empty());
}

TEST(WireProtocol, MalformedBodies) {
  const std::string mask = png_b64(rect_mask(4, 4, 0, 0, 2, 2));
  auto field_error = [](const std::string& body) {
    try {
      parse_segment_response(body, 4, 4, 3, 0);
    } catch (const BackendError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(field_error("not json").find("not JSON"), std::string::npos);
  EXPECT_NE(field_error("{}").find("'candidates'"), std::string::npos);
  EXPECT_NE(field_error(R"({"candidates":[{"confidence":0.5,"text":"x"}]})").find("'mask_png_base64'"), std::string::npos);
  EXPECT_NE(field_error(json{{"candidates", {{{"mask_png_base64", mask}, {"text", "x"}}}}}.dump()).find("'confidence'"),
            std::string::npos);
  EXPECT_NE(field_error(json{{"candidates", {{{"mask_png_base64", mask}, {"confidence", 0.5}}}}}.dump()).find("'text'"),
            std::string::npos);
  EXPECT_NE(field_error(json{{"candidates", {{{"mask_png_base64", mask}, {"confidence", 0.5}, {"text", "x"}, {"bbox", {1, 1, 2, 2}}}}}}.dump())
                .find("'bbox'"),
            std::string::npos);
  EXPECT_NE(field_error(json{{"candidates", {{{"mask_png_base64", "!!!!"}, {"confidence", 0.5}, {"text", "x"}}}}}.dump())
                .find("'mask_png_base64'"),
            std::string::npos);
  EXPECT_NE(field_error(json{{"candidates", {{{"mask_png_base64", png_b64(rect_mask(5, 4, 0, 0, 1, 1))}, {"confidence", 0.5}, {"text", "x"}}}}}.dump())
                .find("5x4"),
            std::string::npos);
}

TEST(WireProtocol, SuppliedBoxIsTightened) {
  const json body{{"candidates",
                   {{{"mask_png_base64", png_b64(rect_mask(8, 8, 2, 2, 4, 5))}, {"confidence", 0.5}, {"text", "x"}, {"bbox", {0, 0, 8, 8}}}}}};
  const auto out = parse_segment_response(body.dump(), 8, 8, 3, 0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].bbox, (BBox{2, 2, 4, 5}));
}

TEST(HttpBackend, RoundTripAgainstLocalServer) {
  MockServer server([](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    const auto img = decode_png_rgb(base64_decode(body["image_png_base64"].get<std::string>()));
    json cands = json::array();
    cands.push_back({{"mask_png_base64", png_b64(rect_mask(img.width, img.height, 0, 0, 3, 3))},
                     {"confidence", 0.25},
                     {"text", "small " + body["query"].get<std::string>()}});
    cands.push_back({{"mask_png_base64", png_b64(rect_mask(img.width, img.height, 0, 0, 6, 6))},
                     {"confidence", 0.75},
                     {"text", "big"},
                     {"bbox", {0, 0, img.width, img.height}}});
    res.set_content(json{{"candidates", cands}}.dump(), "application/json");
  });
  const HttpBackend backend(server.url() + "/");
  const auto out = backend.segment(blank_view(10, 8), SegQuery{"part", 3});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].answerText, "big");
  EXPECT_EQ(out[0].bbox, (BBox{0, 0, 6, 6}));
  EXPECT_EQ(out[1].answerText, "small part");
  EXPECT_EQ(backend.segment(blank_view(10, 8), SegQuery{"part", 1}).size(), 1u);
}

TEST(HttpBackend, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> calls{0};
  MockServer server([&](const httplib::Request&, httplib::Response& res) {
    if (calls++ < 2) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"candidates": []})", "application/json");
  });
  const HttpBackend backend(server.url(), std::chrono::seconds(5), 2);
  EXPECT_TRUE(backend.segment(blank_view(4, 4), SegQuery{"x"}).empty());
  EXPECT_EQ(server.hits.load(), 3);
}

TEST(HttpBackend, ClientErrorsAndExhaustedRetriesRaise) {
  MockServer bad([](const httplib::Request&, httplib::Response& res) {
    res.status = 400;
    res.set_content("bad request", "text/plain");
  });
  EXPECT_THROW(HttpBackend(bad.url(), std::chrono::seconds(5), 2).segment(blank_view(4, 4), SegQuery{"x"}), BackendError);
  EXPECT_EQ(bad.hits.load(), 1);

  MockServer down([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  EXPECT_THROW(HttpBackend(down.url(), std::chrono::seconds(5), 1).segment(blank_view(4, 4), SegQuery{"x"}), BackendError);
  EXPECT_EQ(down.hits.load(), 2);

  MockServer violating([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"candidates": [{"confidence": 1.3}]})", "application/json");
  });
  EXPECT_THROW(HttpBackend(violating.url()).segment(blank_view(4, 4), SegQuery{"x"}), BackendError);
}

TEST(HttpBackend, UnreachableAndBadUrls) {
  EXPECT_THROW(HttpBackend("ftp://x"), std::invalid_argument);
  EXPECT_THROW(HttpBackend("http://"), std::invalid_argument);
  const HttpBackend backend("http://127.0.0.1:1", std::chrono::milliseconds(200), 0);
  EXPECT_THROW(backend.segment(blank_view(4, 4), SegQuery{"x"}), BackendError);
  EXPECT_EQ(backend.describe(), "http:http://127.0.0.1:1");
}

TEST(SegQuery, Validation) {
  EXPECT_THROW(SegQuery{""}.validate(), std::invalid_argument);
  EXPECT_THROW((SegQuery{"x", 0}).validate(), std::invalid_argument);
}
