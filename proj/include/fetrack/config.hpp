#pragma once

// Line-oriented `key = value` run configuration. Unknown keys are an error —
// a misspelled key must never silently fall back to a default. Every key has
// a documented default (see RunConfig member initializers / README).

#include <cstdint>
#include <string>

#include "fetrack/common.hpp"

namespace fetrack {

enum class ZohModeCfg { exact, simplified };
enum class Modality { fused, rgb, event };
enum class MotionModel { linear, sine, bursts };
enum class Background { flat, texture };

struct RunConfig {
  // model scale
  std::int64_t channels = 32;       // token width C
  std::int64_t depth = 2;           // Vim blocks per modality backbone
  std::int64_t state = 4;           // SSM state size N
  std::int64_t conv_width = 4;      // depthwise conv taps K
  std::int64_t dt_rank = 0;         // 0 -> ceil(channels / 16)
  std::int64_t expand = 2;          // block expansion E = expand * C
  std::int64_t patch = 8;           // patch side in pixels
  std::int64_t template_size = 32;  // template patch side
  std::int64_t search_size = 64;    // search patch side
  std::string zoh = "exact";        // exact | simplified
  bool d_skip = true;               // feed-through D term in the scan
  std::string modality = "fused";   // fused | rgb | event

  // training
  std::int64_t steps = 2000;
  std::int64_t batch = 4;
  double lr = 4e-4;
  double weight_decay = 1e-4;
  std::int64_t seed = 1;
  std::int64_t sample_range = 20;     // max template/search frame distance
  double jitter_center = 6.0;         // px, uniform search-center jitter
  double jitter_logscale = 0.2;       // log2 scale jitter on the search crop

  // synthesis
  std::int64_t width = 64;
  std::int64_t height = 64;
  std::int64_t frames = 200;
  std::int64_t sequences = 1;
  std::int64_t frame_period_us = 10000;
  std::int64_t oversample = 8;        // event samples per frame period
  double theta = 0.15;                // log-intensity event threshold
  double object_size = 12.0;          // square side, px
  double object_intensity = 0.85;
  double background_intensity = 0.35;
  std::string motion = "linear";      // linear | sine | bursts
  double speed = 2.0;                 // px per frame
  std::string background = "flat";    // flat | texture
  std::string hdr_clip = "off";       // off | half (alternating 10-frame bursts)
  double hdr_gain = 3.5;
  bool blur = false;

  // tracking
  bool window = false;  // cosine score window

  ZohModeCfg zoh_mode() const;
  Modality modality_mode() const;
  MotionModel motion_model() const;
  Background background_model() const;
  std::int64_t dt_rank_effective() const {
    return dt_rank > 0 ? dt_rank : (channels + 15) / 16;
  }
  std::int64_t score_cells() const { return search_size / patch; }

  void validate() const;  // throws ConfigError on out-of-range values
};

// Parses `key = value` lines; '#' starts a comment; blank lines ignored.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

std::string config_to_text(const RunConfig& c);

}  // namespace fetrack
