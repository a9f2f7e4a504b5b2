#pragma once

// Event-camera data model and the sequence manifest text formats.
//
// A sequence directory holds:
//   events.txt   one event per line, "t x y p" (microseconds, pixel ints, p in {1, -1}),
//                sorted by t
//   frames.idx   one frame per line, "index t_start t_end path", exposure window in
//                microseconds, path relative to the directory
//   gt.txt       one box per line, "frame_index cx cy w h" in pixels
//
// Event images are never stored; they are stacked on the fly from events.txt
// for whatever exposure window a frame declares.

#include <cstdint>
#include <string>
#include <vector>

#include "fetrack/array.hpp"
#include "fetrack/common.hpp"

namespace fetrack {

struct EventPoint {
  std::int64_t t = 0;  // microseconds
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t p = 1;  // +1 brighter, -1 darker
};

struct EventStream {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<EventPoint> events;  // sorted by t
};

struct ExposureWindow {
  std::int64_t t_start = 0;  // inclusive
  std::int64_t t_end = 0;    // exclusive
};

struct FrameIndexEntry {
  std::int64_t index = 0;
  ExposureWindow window;
  std::string path;
};

// A box in full-frame pixel coordinates, tagged with its frame.
struct FrameBox {
  std::int64_t frame_index = 0;
  double cx = 0, cy = 0, w = 0, h = 0;
};

EventStream read_events(const std::string& path, std::int64_t width, std::int64_t height);
void write_events(const std::string& path, const EventStream& s);

std::vector<FrameIndexEntry> read_frame_index(const std::string& path);
void write_frame_index(const std::string& path, const std::vector<FrameIndexEntry>& entries);

std::vector<FrameBox> read_boxes(const std::string& path);
void write_boxes(const std::string& path, const std::vector<FrameBox>& boxes);

// Collapses the events inside [t_start, t_end) into an (H, W, 3) image. Each
// pixel starts at neutral gray 128 and moves by 32 per net event, saturating
// two events away from neutral, the same value replicated across the three
// channels:
//   value = clamp(128 + 64 * sign(s) * min(|s|, 2) / 2, 0, 255)
// where s is the signed event count at that pixel. The result depends only on
// per-pixel sums, so it is invariant to event order within the window. An
// empty window yields an all-128 image. Values are in byte units; divide by
// 255 to feed the tracker.
DenseArray<double> stack_events_to_frame(const EventStream& s, const ExposureWindow& w);

}  // namespace fetrack
