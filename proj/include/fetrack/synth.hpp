#pragma once

// Deterministic synthetic frame+event sequences: a bright square moving over a
// darker background, rendered with subpixel coverage, plus the event stream an
// ideal log-intensity change detector would emit for the same scene.

#include <cstdint>
#include <string>
#include <vector>

#include "fetrack/array.hpp"
#include "fetrack/config.hpp"
#include "fetrack/events.hpp"

namespace fetrack {

struct SynthSequence {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<DenseArray<double>> frames;  // (H, W, 3) in [0, 1], one per exposure
  std::vector<ExposureWindow> windows;     // microseconds, frame i covers [i*P, (i+1)*P)
  EventStream stream;
  std::vector<FrameBox> gt;  // continuous center at each exposure midpoint
};

// Generates one sequence. `seed` picks the trajectory; every draw is from a
// counter-based stream, so output is a pure function of (cfg, seed).
SynthSequence synth_sequence(const RunConfig& cfg, std::uint64_t seed);

// Writes events.txt, frames.idx, gt.txt and frames/NNNNNN.ppm under dir,
// creating directories as needed.
void write_sequence(const std::string& dir, const SynthSequence& s);

}  // namespace fetrack
