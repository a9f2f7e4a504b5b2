#include "fetrack/events.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fetrack {
namespace {

[[noreturn]] void bad_line(const std::string& path, std::int64_t lineno, const char* why) {
  throw IoError(path + ":" + std::to_string(lineno) + ": " + why);
}

}  // namespace

EventStream read_events(const std::string& path, std::int64_t width, std::int64_t height) {
  FETRACK_CHECK_VALUE(width > 0 && height > 0, "read_events: sensor size must be positive");
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  EventStream s;
  s.width = width;
  s.height = height;
  std::string line;
  std::int64_t lineno = 0;
  std::int64_t prev_t = std::numeric_limits<std::int64_t>::min();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    EventPoint e;
    long long t = 0, x = 0, y = 0, p = 0;
    if (!(ls >> t >> x >> y >> p)) bad_line(path, lineno, "want 't x y p'");
    std::string rest;
    if (ls >> rest) bad_line(path, lineno, "trailing fields");
    if (p != 1 && p != -1) bad_line(path, lineno, "polarity must be 1 or -1");
    if (x < 0 || x >= width || y < 0 || y >= height) bad_line(path, lineno, "pixel out of range");
    if (t < prev_t) bad_line(path, lineno, "events must be sorted by time");
    prev_t = t;
    e.t = t;
    e.x = static_cast<std::int32_t>(x);
    e.y = static_cast<std::int32_t>(y);
    e.p = static_cast<std::int32_t>(p);
    s.events.push_back(e);
  }
  return s;
}

void write_events(const std::string& path, const EventStream& s) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  char buf[96];
  for (const auto& e : s.events) {
    std::snprintf(buf, sizeof buf, "%" PRId64 " %d %d %d\n", e.t, e.x, e.y, e.p);
    out << buf;
  }
  if (!out) throw IoError(path + ": write failed");
}

std::vector<FrameIndexEntry> read_frame_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::vector<FrameIndexEntry> entries;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    FrameIndexEntry e;
    long long idx = 0, t0 = 0, t1 = 0;
    if (!(ls >> idx >> t0 >> t1 >> e.path)) bad_line(path, lineno, "want 'index t_start t_end path'");
    if (t1 <= t0) bad_line(path, lineno, "exposure window must be nonempty");
    if (idx != static_cast<long long>(entries.size())) bad_line(path, lineno, "frame indices must be 0..n-1 in order");
    e.index = idx;
    e.window = ExposureWindow{t0, t1};
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_frame_index(const std::string& path, const std::vector<FrameIndexEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  char buf[128];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%" PRId64 " %" PRId64 " %" PRId64 " ", e.index, e.window.t_start,
                  e.window.t_end);
    out << buf << e.path << "\n";
  }
  if (!out) throw IoError(path + ": write failed");
}

std::vector<FrameBox> read_boxes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::vector<FrameBox> boxes;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    FrameBox b;
    long long idx = 0;
    if (!(ls >> idx >> b.cx >> b.cy >> b.w >> b.h)) bad_line(path, lineno, "want 'frame_index cx cy w h'");
    b.frame_index = idx;
    boxes.push_back(b);
  }
  return boxes;
}

void write_boxes(const std::string& path, const std::vector<FrameBox>& boxes) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  char buf[160];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof buf, "%" PRId64 " %.4f %.4f %.4f %.4f\n", b.frame_index, b.cx, b.cy,
                  b.w, b.h);
    out << buf;
  }
  if (!out) throw IoError(path + ": write failed");
}

DenseArray<double> stack_events_to_frame(const EventStream& s, const ExposureWindow& w) {
  FETRACK_CHECK_VALUE(s.width > 0 && s.height > 0, "stack_events_to_frame: sensor size must be positive");
  FETRACK_CHECK_VALUE(w.t_end > w.t_start, "stack_events_to_frame: window must be nonempty");
  std::vector<std::int64_t> count(static_cast<std::size_t>(s.width * s.height), 0);
  // Events are sorted by t; binary-search the window bounds.
  const auto lo = std::lower_bound(s.events.begin(), s.events.end(), w.t_start,
                                   [](const EventPoint& e, std::int64_t t) { return e.t < t; });
  const auto hi = std::lower_bound(lo, s.events.end(), w.t_end,
                                   [](const EventPoint& e, std::int64_t t) { return e.t < t; });
  for (auto it = lo; it != hi; ++it)
    count[static_cast<std::size_t>(std::int64_t(it->y) * s.width + it->x)] += it->p;
  DenseArray<double> img({s.height, s.width, 3});
  for (std::int64_t i = 0; i < s.height * s.width; ++i) {
    const std::int64_t c = count[static_cast<std::size_t>(i)];
    const double sgn = c > 0 ? 1.0 : (c < 0 ? -1.0 : 0.0);
    const double mag = std::min<double>(std::abs(double(c)), 2.0);
    const double v = std::min(std::max(128.0 + 64.0 * sgn * mag / 2.0, 0.0), 255.0);
    for (std::int64_t k = 0; k < 3; ++k) img.data()[i * 3 + k] = v;
  }
  return img;
}

}  // namespace fetrack
