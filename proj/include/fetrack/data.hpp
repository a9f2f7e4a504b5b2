#pragma once

// Sequence loading and the training-pair sampler. A dataset directory holds
// one subdirectory per sequence; each sequence is the events.txt / frames.idx /
// gt.txt manifest plus the frame pixmaps it references.

#include <string>
#include <vector>

#include "fetrack/array.hpp"
#include "fetrack/config.hpp"
#include "fetrack/events.hpp"
#include "fetrack/head.hpp"
#include "fetrack/image.hpp"
#include "fetrack/model.hpp"
#include "fetrack/rng.hpp"

namespace fetrack {

struct SequenceData {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<FrameIndexEntry> index;
  std::vector<DenseArray<double>> frames;        // (H, W, 3) in [0, 1]
  std::vector<DenseArray<double>> event_frames;  // (H, W, 3) in [0, 1], stacked per exposure
  std::vector<FrameBox> gt;
};

// Loads a full sequence eagerly; frame geometry comes from the first pixmap,
// and event images are stacked from events.txt per the frame exposure windows.
SequenceData load_sequence(const std::string& dir);

// Sorted subdirectories of root that contain a frames.idx; root itself when it
// is a single sequence. Empty result is an error.
std::vector<std::string> list_sequences(const std::string& root);

// One training pair: crops in [0, 1] plus the target box normalized to the
// search patch.
struct TrainSample {
  DenseArray<double> rgb_t, rgb_s, evt_t, evt_s;
  BoxF gt_box;
};

// Draws (template frame, nearby search frame), cuts context crops, and jitters
// the search window in center and scale so the target is not always centered.
// All draws come from `rng` in a fixed order, so the sample is a pure function
// of the rng state.
TrainSample make_train_sample(const SequenceData& seq, const RunConfig& cfg, Rng& rng);

template <typename T>
SampleInput<T> to_input(const TrainSample& s) {
  SampleInput<T> in;
  in.rgb_t = s.rgb_t.template cast<T>();
  in.rgb_s = s.rgb_s.template cast<T>();
  in.evt_t = s.evt_t.template cast<T>();
  in.evt_s = s.evt_s.template cast<T>();
  return in;
}

}  // namespace fetrack
