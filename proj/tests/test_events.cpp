#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "fetrack/events.hpp"
#include "fetrack/grad_check.hpp"
#include "fetrack/image.hpp"
#include "fetrack/metrics.hpp"
#include "fetrack/rng.hpp"
#include "fetrack/synth.hpp"

using namespace fetrack;

namespace {

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

RunConfig synth_cfg() {
  RunConfig cfg;
  cfg.width = 48;
  cfg.height = 40;
  cfg.frames = 12;
  cfg.object_size = 10.0;
  cfg.speed = 2.0;
  return cfg;
}

}  // namespace

TEST_CASE("pixmap files round trip byte for byte") {
  DenseArray<double> rgb({3, 5, 3});
  for (std::int64_t i = 0; i < rgb.numel(); ++i) rgb[i] = double(i % 256) / 255.0;
  const std::string p6 = tmp_path("fetrack_rt.ppm");
  write_image(p6, rgb);
  DenseArray<double> back = read_image(p6);
  REQUIRE(back.same_shape(rgb));
  CHECK(max_abs_diff(back, rgb) == 0.0);

  DenseArray<double> gray({4, 4, 1});
  for (std::int64_t i = 0; i < gray.numel(); ++i) gray[i] = double(i * 16) / 255.0;
  const std::string p5 = tmp_path("fetrack_rt.pgm");
  write_image(p5, gray);
  DenseArray<double> gback = read_image(p5);
  REQUIRE(gback.extent(2) == 1);
  CHECK(max_abs_diff(gback, gray) == 0.0);

  // Out-of-range values clamp on write.
  DenseArray<double> wild({1, 2, 1});
  wild[0] = -0.5;
  wild[1] = 1.5;
  write_image(p5, wild);
  DenseArray<double> clamped = read_image(p5);
  CHECK(clamped[0] == 0.0);
  CHECK(clamped[1] == 1.0);

  std::filesystem::remove(p6);
  std::filesystem::remove(p5);
}

TEST_CASE("pixmap reader rejects foreign and truncated files") {
  const std::string p = tmp_path("fetrack_bad.ppm");
  {
    std::FILE* f = std::fopen(p.c_str(), "wb");
    std::fputs("P3\n2 2\n255\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS((void)read_image(p), IoError);
  {
    std::FILE* f = std::fopen(p.c_str(), "wb");
    std::fputs("P6\n4 4\n255\n", f);
    std::fputs("short", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS((void)read_image(p), IoError);
  CHECK_THROWS_AS((void)read_image(tmp_path("fetrack_missing.ppm")), IoError);
  std::filesystem::remove(p);
}

TEST_CASE("bilinear resize: identity and hand-checked upscale") {
  DenseArray<double> img({2, 2, 1});
  img.at3(0, 0, 0) = 0.1;
  img.at3(0, 1, 0) = 0.5;
  img.at3(1, 0, 0) = 0.9;
  img.at3(1, 1, 0) = 0.3;
  DenseArray<double> same = resize_bilinear(img, 2, 2);
  CHECK(max_abs_diff(same, img) == 0.0);

  // 1x2 -> 1x4 with half-pixel centers: edge columns clamp, the middle two
  // interpolate at weights 3/4, 1/4.
  DenseArray<double> row({1, 2, 1});
  row.at3(0, 0, 0) = 0.2;
  row.at3(0, 1, 0) = 0.6;
  DenseArray<double> up = resize_bilinear(row, 1, 4);
  CHECK(up.at3(0, 0, 0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(up.at3(0, 1, 0) == doctest::Approx(0.75 * 0.2 + 0.25 * 0.6).epsilon(1e-12));
  CHECK(up.at3(0, 2, 0) == doctest::Approx(0.25 * 0.2 + 0.75 * 0.6).epsilon(1e-12));
  CHECK(up.at3(0, 3, 0) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("crop with matching side is an exact window copy") {
  DenseArray<double> frame({8, 8, 1});
  for (std::int64_t i = 0; i < frame.numel(); ++i) frame[i] = double(i) / 64.0;
  CropInfo info;
  // sqrt(2 * 2) * 2 = 4 = out, centered at (4, 4) -> window [2, 6)^2.
  DenseArray<double> patch = crop_patch(frame, 4.0, 4.0, 2.0, 2.0, 2.0, 4, &info);
  CHECK(info.side == 4);
  CHECK(info.x0 == 2);
  CHECK(info.y0 == 2);
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 4; ++x) CHECK(patch.at3(y, x, 0) == frame.at3(y + 2, x + 2, 0));
}

TEST_CASE("crop outside the frame fills with the valid-region mean") {
  DenseArray<double> frame({4, 4, 1});
  for (std::int64_t i = 0; i < frame.numel(); ++i) frame[i] = double(i) / 16.0;
  CropInfo info;
  // Window [-2, 2)^2; the in-frame quadrant is {0, 1, 4, 5} / 16.
  DenseArray<double> patch = crop_patch(frame, 0.0, 0.0, 2.0, 2.0, 2.0, 4, &info);
  CHECK(info.x0 == -2);
  CHECK(info.y0 == -2);
  const double fill = (0.0 + 1.0 + 4.0 + 5.0) / 4.0 / 16.0;
  CHECK(patch.at3(0, 0, 0) == doctest::Approx(fill).epsilon(1e-12));
  CHECK(patch.at3(0, 3, 0) == doctest::Approx(fill).epsilon(1e-12));
  CHECK(patch.at3(3, 3, 0) == frame.at3(1, 1, 0));

  // A constant frame stays constant no matter how far the window hangs out.
  DenseArray<double> flat = DenseArray<double>::full({4, 4, 1}, 0.7);
  DenseArray<double> fp = crop_patch(flat, -1.0, 5.0, 3.0, 3.0, 2.0, 8);
  for (std::int64_t i = 0; i < fp.numel(); ++i) CHECK(fp[i] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("crop rejects degenerate boxes and disjoint windows") {
  DenseArray<double> frame({4, 4, 1});
  CHECK_THROWS_AS((void)crop_patch(frame, 2.0, 2.0, 0.0, 2.0, 2.0, 4), ValueError);
  CHECK_THROWS_AS((void)crop_patch(frame, 2.0, 2.0, 2.0, 2.0, -1.0, 4), ValueError);
  CHECK_THROWS_AS((void)crop_patch(frame, 100.0, 100.0, 2.0, 2.0, 2.0, 4), ValueError);
}

TEST_CASE("crop keeps the requested center within half a pixel") {
  DenseArray<double> frame({64, 64, 3});
  Rng rng(11, 0xc0ffee);
  for (int trial = 0; trial < 50; ++trial) {
    const double cx = rng.next_uniform(5.0, 59.0);
    const double cy = rng.next_uniform(5.0, 59.0);
    const double w = rng.next_uniform(2.0, 20.0);
    const double h = rng.next_uniform(2.0, 20.0);
    const double ctx = rng.next_uniform(1.5, 4.5);
    CropInfo info;
    (void)crop_patch(frame, cx, cy, w, h, ctx, 32, &info);
    const double center_x = double(info.x0) + double(info.side) / 2.0;
    const double center_y = double(info.y0) + double(info.side) / 2.0;
    CHECK(std::abs(center_x - cx) <= 0.5 + 1e-12);
    CHECK(std::abs(center_y - cy) <= 0.5 + 1e-12);
  }
}

TEST_CASE("event stacking encodes signed counts saturating two steps from gray") {
  EventStream s;
  s.width = 7;
  s.height = 1;
  auto add = [&](std::int64_t t, std::int32_t x, std::int32_t p, int n) {
    for (int i = 0; i < n; ++i) s.events.push_back(EventPoint{t, x, 0, p});
  };
  add(5, 0, 1, 1);   // +1 -> 160
  add(5, 1, -1, 1);  // -1 -> 96
  add(5, 2, 1, 2);   // +2 -> 192
  add(5, 3, -1, 2);  // -2 -> 64
  add(5, 4, 1, 3);   // +3 saturates -> 192
  add(5, 5, -1, 3);  // -3 saturates -> 64
  add(5, 6, 1, 1);   // +1 then -1 cancels -> 128
  add(6, 6, -1, 1);
  DenseArray<double> img = stack_events_to_frame(s, ExposureWindow{0, 10});
  REQUIRE(img.extent(0) == 1);
  REQUIRE(img.extent(1) == 7);
  REQUIRE(img.extent(2) == 3);
  const double want[7] = {160, 96, 192, 64, 192, 64, 128};
  for (std::int64_t x = 0; x < 7; ++x)
    for (std::int64_t k = 0; k < 3; ++k) CHECK(img.at3(0, x, k) == want[x]);

  // An empty window is neutral gray everywhere, not an error.
  DenseArray<double> empty = stack_events_to_frame(s, ExposureWindow{100, 200});
  for (std::int64_t i = 0; i < empty.numel(); ++i) CHECK(empty[i] == 128.0);
}

TEST_CASE("event stacking is order invariant and windows are half open") {
  EventStream a, b;
  a.width = b.width = 4;
  a.height = b.height = 4;
  // Same multiset of simultaneous events in two different file orders.
  a.events = {{3, 1, 1, 1}, {3, 2, 2, -1}, {3, 1, 1, 1}, {3, 0, 3, -1}};
  b.events = {{3, 0, 3, -1}, {3, 1, 1, 1}, {3, 1, 1, 1}, {3, 2, 2, -1}};
  CHECK(max_abs_diff(stack_events_to_frame(a, ExposureWindow{0, 8}),
                     stack_events_to_frame(b, ExposureWindow{0, 8})) == 0.0);

  // An event exactly at a window edge belongs to the window that starts there.
  EventStream c;
  c.width = 2;
  c.height = 1;
  c.events = {{10, 0, 0, 1}};
  DenseArray<double> before = stack_events_to_frame(c, ExposureWindow{0, 10});
  DenseArray<double> after = stack_events_to_frame(c, ExposureWindow{10, 20});
  CHECK(before.at3(0, 0, 0) == 128.0);
  CHECK(after.at3(0, 0, 0) == 160.0);
}

TEST_CASE("event and manifest files round trip and reject malformed input") {
  EventStream s;
  s.width = 32;
  s.height = 16;
  s.events = {{0, 0, 0, 1}, {5, 31, 15, -1}, {5, 7, 3, 1}, {123456789, 1, 2, -1}};
  const std::string ep = tmp_path("fetrack_events.txt");
  write_events(ep, s);
  EventStream back = read_events(ep, 32, 16);
  REQUIRE(back.events.size() == s.events.size());
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    CHECK(back.events[i].t == s.events[i].t);
    CHECK(back.events[i].x == s.events[i].x);
    CHECK(back.events[i].y == s.events[i].y);
    CHECK(back.events[i].p == s.events[i].p);
  }

  auto write_text = [&](const char* text) {
    std::FILE* f = std::fopen(ep.c_str(), "w");
    std::fputs(text, f);
    std::fclose(f);
  };
  write_text("5 0 0 1\n3 0 0 1\n");  // unsorted
  CHECK_THROWS_AS((void)read_events(ep, 32, 16), IoError);
  write_text("5 0 0 2\n");  // bad polarity
  CHECK_THROWS_AS((void)read_events(ep, 32, 16), IoError);
  write_text("5 32 0 1\n");  // x out of range
  CHECK_THROWS_AS((void)read_events(ep, 32, 16), IoError);
  write_text("5 0 0\n");  // missing field
  CHECK_THROWS_AS((void)read_events(ep, 32, 16), IoError);
  std::filesystem::remove(ep);

  const std::string ip = tmp_path("fetrack_frames.idx");
  std::vector<FrameIndexEntry> idx = {{0, {0, 10}, "frames/000000.ppm"},
                                      {1, {10, 20}, "frames/000001.ppm"}};
  write_frame_index(ip, idx);
  auto iback = read_frame_index(ip);
  REQUIRE(iback.size() == 2);
  CHECK(iback[1].window.t_start == 10);
  CHECK(iback[1].path == "frames/000001.ppm");
  {
    std::FILE* f = std::fopen(ip.c_str(), "w");
    std::fputs("0 0 10 a.ppm\n2 10 20 b.ppm\n", f);  // gap in indices
    std::fclose(f);
  }
  CHECK_THROWS_AS((void)read_frame_index(ip), IoError);
  std::filesystem::remove(ip);

  const std::string bp = tmp_path("fetrack_gt.txt");
  std::vector<FrameBox> boxes = {{0, 10.5, 20.25, 12.0, 12.0}, {1, 11.0, 21.0, 12.0, 12.0}};
  write_boxes(bp, boxes);
  auto bback = read_boxes(bp);
  REQUIRE(bback.size() == 2);
  CHECK(bback[0].cx == doctest::Approx(10.5).epsilon(1e-12));
  CHECK(bback[1].frame_index == 1);
  std::filesystem::remove(bp);
}

TEST_CASE("synthesis is a pure function of config and seed") {
  const RunConfig cfg = synth_cfg();
  SynthSequence a = synth_sequence(cfg, 9);
  SynthSequence b = synth_sequence(cfg, 9);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    CHECK(max_abs_diff(a.frames[i], b.frames[i]) == 0.0);
  REQUIRE(a.stream.events.size() == b.stream.events.size());
  for (std::size_t i = 0; i < a.stream.events.size(); ++i) {
    CHECK(a.stream.events[i].t == b.stream.events[i].t);
    CHECK(a.stream.events[i].x == b.stream.events[i].x);
  }
  for (std::size_t i = 0; i < a.gt.size(); ++i) {
    CHECK(a.gt[i].cx == b.gt[i].cx);
    CHECK(a.gt[i].cy == b.gt[i].cy);
  }
  // A different seed moves the object.
  SynthSequence c = synth_sequence(cfg, 10);
  CHECK(a.gt[0].cx != c.gt[0].cx);
}

TEST_CASE("synthetic frames are replicated gray with the target inside bounds") {
  const RunConfig cfg = synth_cfg();
  SynthSequence s = synth_sequence(cfg, 3);
  REQUIRE(std::int64_t(s.frames.size()) == cfg.frames);
  REQUIRE(s.gt.size() == s.frames.size());
  REQUIRE(s.windows.size() == s.frames.size());
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    CHECK(s.windows[i].t_start == std::int64_t(i) * cfg.frame_period_us);
    CHECK(s.windows[i].t_end == std::int64_t(i + 1) * cfg.frame_period_us);
    const auto& f = s.frames[i];
    for (std::int64_t j = 0; j < f.extent(0) * f.extent(1); ++j) {
      CHECK(f.data()[j * 3] == f.data()[j * 3 + 1]);
      CHECK(f.data()[j * 3] == f.data()[j * 3 + 2]);
    }
    const double margin = cfg.object_size / 2.0 + 1.0;
    CHECK(s.gt[i].cx >= margin - 1e-9);
    CHECK(s.gt[i].cx <= double(cfg.width) - margin + 1e-9);
    CHECK(s.gt[i].cy >= margin - 1e-9);
    CHECK(s.gt[i].cy <= double(cfg.height) - margin + 1e-9);
    CHECK(s.gt[i].w == cfg.object_size);
  }
  // The object actually moves.
  CHECK(std::abs(s.gt[5].cx - s.gt[0].cx) + std::abs(s.gt[5].cy - s.gt[0].cy) > 0.5);
}

TEST_CASE("a static scene emits no events, textured or flat") {
  RunConfig cfg = synth_cfg();
  cfg.speed = 0.0;
  CHECK(synth_sequence(cfg, 4).stream.events.empty());
  cfg.background = "texture";
  CHECK(synth_sequence(cfg, 4).stream.events.empty());
  cfg.motion = "sine";
  CHECK(synth_sequence(cfg, 4).stream.events.empty());
}

TEST_CASE("events cluster around the moving square") {
  for (const char* motion : {"linear", "sine", "bursts"}) {
    RunConfig cfg = synth_cfg();
    cfg.motion = motion;
    SynthSequence s = synth_sequence(cfg, 21);
    CHECK(!s.stream.events.empty());
    const double half = cfg.object_size / 2.0;
    for (const auto& e : s.stream.events) {
      const std::int64_t f =
          std::min<std::int64_t>(e.t / cfg.frame_period_us, cfg.frames - 1);
      const auto& g = s.gt[static_cast<std::size_t>(f)];
      // Within the square's edge band at that frame, padded for the motion
      // between the exposure midpoint and the event sample (bursts peak at
      // 3x speed).
      const double pad = half + 1.0 + 3.0 * cfg.speed + 2.0;
      CHECK(std::abs(double(e.x) - g.cx) <= pad);
      CHECK(std::abs(double(e.y) - g.cy) <= pad);
    }
  }
}

TEST_CASE("gain clipped frames saturate while the event stream is untouched") {
  RunConfig cfg = synth_cfg();
  cfg.frames = 24;
  SynthSequence clean = synth_sequence(cfg, 5);
  cfg.hdr_clip = "half";
  SynthSequence clipped = synth_sequence(cfg, 5);

  // Frames 0..9 clean, 10..19 clipped (0.35 * 3.5 > 1 washes everything out).
  CHECK(max_abs_diff(clipped.frames[0], clean.frames[0]) == 0.0);
  CHECK(max_abs_diff(clipped.frames[9], clean.frames[9]) == 0.0);
  for (std::int64_t j = 0; j < clipped.frames[10].numel(); ++j)
    CHECK(clipped.frames[10][j] == 1.0);
  CHECK(max_abs_diff(clipped.frames[20], clean.frames[20]) == 0.0);

  REQUIRE(clipped.stream.events.size() == clean.stream.events.size());
  for (std::size_t i = 0; i < clean.stream.events.size(); ++i) {
    CHECK(clipped.stream.events[i].t == clean.stream.events[i].t);
    CHECK(clipped.stream.events[i].x == clean.stream.events[i].x);
    CHECK(clipped.stream.events[i].y == clean.stream.events[i].y);
    CHECK(clipped.stream.events[i].p == clean.stream.events[i].p);
  }
  // Ground truth is the scene, not the sensor: identical with and without.
  for (std::size_t i = 0; i < clean.gt.size(); ++i) CHECK(clipped.gt[i].cx == clean.gt[i].cx);
}

TEST_CASE("exposure blur averages sub-exposures without moving the target") {
  RunConfig cfg = synth_cfg();
  SynthSequence sharp = synth_sequence(cfg, 6);
  cfg.blur = true;
  SynthSequence blurred = synth_sequence(cfg, 6);
  double diff = 0;
  for (std::size_t i = 0; i < sharp.frames.size(); ++i)
    diff = std::max(diff, max_abs_diff(sharp.frames[i], blurred.frames[i]));
  CHECK(diff > 1e-3);
  for (std::size_t i = 0; i < sharp.gt.size(); ++i) {
    CHECK(blurred.gt[i].cx == sharp.gt[i].cx);
    CHECK(blurred.gt[i].cy == sharp.gt[i].cy);
  }
}

TEST_CASE("written sequences reload with stacked event frames") {
  RunConfig cfg = synth_cfg();
  cfg.frames = 6;
  SynthSequence s = synth_sequence(cfg, 13);
  const std::string dir = tmp_path("fetrack_seq");
  std::filesystem::remove_all(dir);
  write_sequence(dir, s);

  EventStream back = read_events(dir + "/events.txt", cfg.width, cfg.height);
  REQUIRE(back.events.size() == s.stream.events.size());
  auto idx = read_frame_index(dir + "/frames.idx");
  REQUIRE(std::int64_t(idx.size()) == cfg.frames);
  DenseArray<double> f0 = read_image(dir + "/" + idx[0].path);
  CHECK(f0.extent(0) == cfg.height);
  CHECK(f0.extent(1) == cfg.width);
  CHECK(f0.extent(2) == 3);
  // Written bytes are the quantized frame values.
  double q = 0;
  for (std::int64_t j = 0; j < f0.numel(); ++j)
    q = std::max(q, std::abs(f0[j] - s.frames[0][j]));
  CHECK(q <= 0.5 / 255.0 + 1e-12);
  std::filesystem::remove_all(dir);
}

TEST_CASE("tracking metrics match the hand-computed fixture") {
  // gt fixed at (50, 50, 10, 10); preds displaced along x by
  // d = 0, .55, 1.05, 1.55, 2.05, 2.55, 3.05, 3.55 plus misses at 25 and 40.
  // IoU(d) = (10 - d) / (10 + d) gives per-record SR threshold counts
  // 20, 18, 17, 15, 14, 12, 11, 10 (sum 117 -> SR 58.5); nerr = d / 10 gives
  // NPR counts 50, 44, 39, 34, 29, 24, 19, 14 (sum 253 -> NPR 50.6); the two
  // misses cap PR at 80.
  std::vector<TrackRecord> recs;
  const double disp[10] = {0.0, 0.55, 1.05, 1.55, 2.05, 2.55, 3.05, 3.55, 25.0, 40.0};
  for (int i = 0; i < 10; ++i) {
    TrackRecord r;
    r.gt = FrameBox{i, 50.0, 50.0, 10.0, 10.0};
    r.pred = FrameBox{i, 50.0 + disp[i], 50.0, 10.0, 10.0};
    recs.push_back(r);
  }
  const Metrics m = eval_metrics(recs);
  CHECK(m.sr == doctest::Approx(58.5).epsilon(1e-9));
  CHECK(m.pr == doctest::Approx(80.0).epsilon(1e-9));
  CHECK(m.npr == doctest::Approx(50.6).epsilon(1e-9));
}

TEST_CASE("constant half overlap scores exactly fifty") {
  // A 5x10 pred centered at (48.75, 50) inside a 10x10 gt: inter 50, union
  // 100, IoU exactly 0.5 in doubles. Strict thresholds make SR 50.
  std::vector<TrackRecord> recs;
  for (int i = 0; i < 4; ++i) {
    TrackRecord r;
    r.gt = FrameBox{i, 50.0, 50.0, 10.0, 10.0};
    r.pred = FrameBox{i, 48.75, 50.0, 5.0, 10.0};
    recs.push_back(r);
  }
  CHECK(pixel_iou(recs[0].pred, recs[0].gt) == 0.5);
  const Metrics m = eval_metrics(recs);
  CHECK(m.sr == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(m.pr == 100.0);
}

TEST_CASE("metrics reject empty input and degenerate ground truth") {
  CHECK_THROWS_AS((void)eval_metrics({}), ValueError);
  TrackRecord r;
  r.gt = FrameBox{0, 50.0, 50.0, 0.0, 10.0};
  r.pred = r.gt;
  CHECK_THROWS_AS((void)eval_metrics({r}), ValueError);
}
