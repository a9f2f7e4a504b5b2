#include "fetrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fetrack/image.hpp"
#include "fetrack/rng.hpp"

namespace fetrack {
namespace {

constexpr double kTau = 6.283185307179586476925286766559;
constexpr double kTextureAmp = 0.08;
constexpr double kLogFloor = 1e-3;  // intensities are floored before log so the detector is defined everywhere

// Reflects u into [lo, hi] with a triangle wave; continuous in u.
double fold(double u, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0.0) return (lo + hi) / 2.0;
  double v = std::fmod(u - lo, 2.0 * span);
  if (v < 0.0) v += 2.0 * span;
  return v <= span ? lo + v : lo + 2.0 * span - v;
}

// Distance traveled by frame-time tf under the burst speed profile:
// multiplier 0.5 for 20 frames, then 3.0 for 10 frames, repeating. The
// integral is continuous and piecewise linear.
double burst_arc(double tf) {
  const double slow = 20.0, fast = 10.0, period = slow + fast;
  const double per_cycle = slow * 0.5 + fast * 3.0;
  const double cycles = std::floor(tf / period);
  const double rem = tf - cycles * period;
  const double partial = rem <= slow ? rem * 0.5 : slow * 0.5 + (rem - slow) * 3.0;
  return cycles * per_cycle + partial;
}

struct Trajectory {
  MotionModel model;
  double speed;
  double lo_x, hi_x, lo_y, hi_y;  // reachable center range
  double x0, y0;                  // start / mid point
  double dx, dy;                  // unit direction (linear, bursts)
  double px, py;                  // periods in frames (sine)
  double phx, phy;                // phases (sine)

  void center(double tf, double* cx, double* cy) const {
    switch (model) {
      case MotionModel::linear: {
        *cx = fold(x0 + dx * speed * tf, lo_x, hi_x);
        *cy = fold(y0 + dy * speed * tf, lo_y, hi_y);
        return;
      }
      case MotionModel::bursts: {
        const double s = speed * burst_arc(tf);
        *cx = fold(x0 + dx * s, lo_x, hi_x);
        *cy = fold(y0 + dy * s, lo_y, hi_y);
        return;
      }
      case MotionModel::sine: {
        const double ax = (hi_x - lo_x) / 2.0, ay = (hi_y - lo_y) / 2.0;
        *cx = (lo_x + hi_x) / 2.0 + ax * std::sin(px > 0.0 ? kTau * tf / px + phx : phx);
        *cy = (lo_y + hi_y) / 2.0 + ay * std::sin(py > 0.0 ? kTau * tf / py + phy : phy);
        return;
      }
    }
    *cx = x0;
    *cy = y0;
  }
};

Trajectory make_trajectory(const RunConfig& cfg, std::uint64_t seed) {
  Rng rng(seed, 0x73796e7468ull);  // one stream per sequence; draws below happen in fixed order
  Trajectory tr{};
  tr.model = cfg.motion_model();
  tr.speed = cfg.speed;
  const double margin = cfg.object_size / 2.0 + 1.0;
  tr.lo_x = std::min(margin, cfg.width / 2.0);
  tr.hi_x = std::max(cfg.width - margin, cfg.width / 2.0);
  tr.lo_y = std::min(margin, cfg.height / 2.0);
  tr.hi_y = std::max(cfg.height - margin, cfg.height / 2.0);
  tr.x0 = rng.next_uniform(tr.lo_x, tr.hi_x);
  tr.y0 = rng.next_uniform(tr.lo_y, tr.hi_y);
  const double ang = rng.next_uniform(0.0, kTau);
  tr.dx = std::cos(ang);
  tr.dy = std::sin(ang);
  tr.phx = rng.next_uniform(0.0, kTau);
  tr.phy = rng.next_uniform(0.0, kTau);
  // Period chosen so the peak sine speed matches cfg.speed; the two axes get
  // incommensurate periods so the path fills the range instead of retracing.
  const double ax = (tr.hi_x - tr.lo_x) / 2.0, ay = (tr.hi_y - tr.lo_y) / 2.0;
  tr.px = cfg.speed > 0.0 && ax > 0.0 ? kTau * ax / cfg.speed : 0.0;
  tr.py = cfg.speed > 0.0 && ay > 0.0 ? kTau * ay / cfg.speed * 1.3721 : 0.0;
  return tr;
}

double background_at(const RunConfig& cfg, Background bg, std::int64_t x, std::int64_t y) {
  if (bg == Background::flat) return cfg.background_intensity;
  const double v = cfg.background_intensity +
                   kTextureAmp * std::sin(kTau * (double(x) + 0.5) / 13.0) *
                       std::cos(kTau * (double(y) + 0.5) / 9.0);
  return std::min(std::max(v, 0.05), 1.0);
}

// Scene radiance at frame-time tf: background blended with the square by the
// exact coverage of each unit pixel cell, so motion is smooth at subpixel
// scale.
void render(const RunConfig& cfg, const Trajectory& tr, const DenseArray<double>& bg, double tf,
            DenseArray<double>* out) {
  double cx = 0, cy = 0;
  tr.center(tf, &cx, &cy);
  const double half = cfg.object_size / 2.0;
  const std::int64_t W = cfg.width, H = cfg.height;
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double ox = std::max(0.0, std::min(double(x) + 1.0, cx + half) - std::max(double(x), cx - half));
      const double oy = std::max(0.0, std::min(double(y) + 1.0, cy + half) - std::max(double(y), cy - half));
      const double cov = ox * oy;
      out->at2(y, x) = bg.at2(y, x) * (1.0 - cov) + cfg.object_intensity * cov;
    }
}

bool hdr_frame(const RunConfig& cfg, std::int64_t i) {
  return cfg.hdr_clip == "half" && (i / 10) % 2 == 1;
}

}  // namespace

SynthSequence synth_sequence(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::int64_t W = cfg.width, H = cfg.height, N = cfg.frames;
  const std::int64_t P = cfg.frame_period_us, K = cfg.oversample;
  const Background bgm = cfg.background_model();
  const Trajectory tr = make_trajectory(cfg, seed);

  SynthSequence out;
  out.width = W;
  out.height = H;
  out.stream.width = W;
  out.stream.height = H;

  DenseArray<double> bg({H, W});
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) bg.at2(y, x) = background_at(cfg, bgm, x, y);

  // Frames: radiance sampled at the exposure midpoint (or averaged over five
  // sub-exposures when blur is on), with optional gain+clip on alternating
  // ten-frame bursts. Frame 0 is always clean.
  DenseArray<double> scene({H, W});
  DenseArray<double> accum({H, W});
  for (std::int64_t i = 0; i < N; ++i) {
    if (cfg.blur) {
      accum.fill(0.0);
      for (int k = 0; k < 5; ++k) {
        render(cfg, tr, bg, double(i) + (double(k) + 0.5) / 5.0, &scene);
        for (std::int64_t j = 0; j < H * W; ++j) accum.data()[j] += scene.data()[j] / 5.0;
      }
      scene = accum;
    } else {
      render(cfg, tr, bg, double(i) + 0.5, &scene);
    }
    const bool clip = hdr_frame(cfg, i);
    DenseArray<double> frame({H, W, 3});
    for (std::int64_t j = 0; j < H * W; ++j) {
      double v = scene.data()[j];
      if (clip) v = std::min(v * cfg.hdr_gain, 1.0);
      for (std::int64_t k = 0; k < 3; ++k) frame.data()[j * 3 + k] = v;
    }
    out.frames.push_back(std::move(frame));
    out.windows.push_back(ExposureWindow{i * P, (i + 1) * P});

    double cx = 0, cy = 0;
    tr.center(double(i) + 0.5, &cx, &cy);
    out.gt.push_back(FrameBox{i, cx, cy, cfg.object_size, cfg.object_size});
  }

  // Events: an ideal detector compares log radiance against a per-pixel
  // reference that advances in threshold steps on every emission. The scene is
  // sampled `oversample` times per frame period; the detector sees the clean
  // radiance, never the gain-clipped frames. A static scene emits nothing.
  std::vector<double> ref(static_cast<std::size_t>(H * W));
  render(cfg, tr, bg, 0.0, &scene);
  for (std::int64_t j = 0; j < H * W; ++j)
    ref[static_cast<std::size_t>(j)] = std::log(std::max(scene.data()[j], kLogFloor));
  for (std::int64_t g = 1; g < N * K; ++g) {
    const std::int64_t t_us = g * P / K;
    render(cfg, tr, bg, double(g) / double(K), &scene);
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const std::int64_t j = y * W + x;
        const double li = std::log(std::max(scene.data()[j], kLogFloor));
        const double d = li - ref[static_cast<std::size_t>(j)];
        const std::int64_t n = std::int64_t(std::floor(std::abs(d) / cfg.theta));
        if (n < 1) continue;
        const std::int32_t pol = d > 0.0 ? 1 : -1;
        for (std::int64_t e = 0; e < n; ++e)
          out.stream.events.push_back(EventPoint{t_us, std::int32_t(x), std::int32_t(y), pol});
        ref[static_cast<std::size_t>(j)] += double(pol) * double(n) * cfg.theta;
      }
  }
  return out;
}

void write_sequence(const std::string& dir, const SynthSequence& s) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "frames", ec);
  if (ec) throw IoError(dir + ": cannot create sequence directory");
  std::vector<FrameIndexEntry> index;
  char name[64];
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    std::snprintf(name, sizeof name, "frames/%06zu.ppm", i);
    write_image((fs::path(dir) / name).string(), s.frames[i]);
    index.push_back(FrameIndexEntry{std::int64_t(i), s.windows[i], name});
  }
  write_frame_index((fs::path(dir) / "frames.idx").string(), index);
  write_events((fs::path(dir) / "events.txt").string(), s.stream);
  write_boxes((fs::path(dir) / "gt.txt").string(), s.gt);
}

}  // namespace fetrack
