#pragma once

// Sequence tracking: templates are cut once from the first frame's box and
// never updated; each later frame is searched around the previous prediction.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "fetrack/data.hpp"
#include "fetrack/metrics.hpp"
#include "fetrack/model.hpp"

namespace fetrack {

// Tracks frames 1..N-1 of a loaded sequence (frame 0 seeds the templates), so
// the result has one record per frame after the first. `use_window` biases the
// peak search with a centered raised-cosine taper. When dump_dir is nonempty,
// each frame's score map is written there as score_NNNNNN.pgm.
template <typename T>
std::vector<TrackRecord> track_sequence(TrackerModel<T>& model, const SequenceData& seq,
                                        bool use_window, const std::string& dump_dir = "") {
  FETRACK_CHECK_VALUE(seq.frames.size() >= 2, "track_sequence: need at least two frames");
  const RunConfig& cfg = model.cfg;
  if (!dump_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(dump_dir, ec);
    if (ec) throw IoError(dump_dir + ": cannot create dump directory");
  }

  const FrameBox& init = seq.gt[0];
  FETRACK_CHECK_VALUE(init.w > 0 && init.h > 0, "track_sequence: degenerate initial box");
  SampleInput<T> in;
  in.rgb_t = crop_patch(seq.frames[0], init.cx, init.cy, init.w, init.h, 2.0, cfg.template_size)
                 .template cast<T>();
  in.evt_t = crop_patch(seq.event_frames[0], init.cx, init.cy, init.w, init.h, 2.0,
                        cfg.template_size)
                 .template cast<T>();

  const DenseArray<double> window = cosine_window(cfg.score_cells());
  std::vector<TrackRecord> records;
  FrameBox prev = init;
  for (std::size_t f = 1; f < seq.frames.size(); ++f) {
    const auto t0 = std::chrono::steady_clock::now();
    CropInfo info;
    in.rgb_s = crop_patch(seq.frames[f], prev.cx, prev.cy, prev.w, prev.h, 4.0, cfg.search_size,
                          &info)
                   .template cast<T>();
    in.evt_s = crop_patch(seq.event_frames[f], prev.cx, prev.cy, prev.w, prev.h, 4.0,
                          cfg.search_size)
                   .template cast<T>();
    ModelCtx<T> ctx;
    HeadOut<T> maps = model.forward(in, false, ctx);
    const BoxF b = decode_bbox(maps, use_window ? &window : nullptr);

    FrameBox pred;
    pred.frame_index = seq.gt[f].frame_index;
    pred.cx = double(info.x0) + b.cx * double(info.side);
    pred.cy = double(info.y0) + b.cy * double(info.side);
    // Keep the next search window overlapping the frame even if a prediction
    // runs wild: the box cannot outgrow the frame, and its center stays
    // inside it. Without the size cap a bad size estimate would compound
    // through the search-window feedback from frame to frame.
    pred.w = std::min(std::max(b.w * double(info.side), 1.0), double(seq.width));
    pred.h = std::min(std::max(b.h * double(info.side), 1.0), double(seq.height));
    pred.cx = std::min(std::max(pred.cx, 0.0), double(seq.width - 1));
    pred.cy = std::min(std::max(pred.cy, 0.0), double(seq.height - 1));
    const auto t1 = std::chrono::steady_clock::now();

    TrackRecord r;
    r.pred = pred;
    r.gt = seq.gt[f];
    r.seconds = std::chrono::duration<double>(t1 - t0).count();
    records.push_back(r);
    prev = pred;

    if (!dump_dir.empty()) {
      const std::int64_t S = maps.score.extent(0);
      DenseArray<double> gray({S, S, 1});
      for (std::int64_t i = 0; i < S * S; ++i) gray.data()[i] = double(maps.score.data()[i]);
      char name[64];
      std::snprintf(name, sizeof name, "score_%06lld.pgm", static_cast<long long>(seq.gt[f].frame_index));
      write_image((std::filesystem::path(dump_dir) / name).string(), gray);
    }
  }
  return records;
}

}  // namespace fetrack
