#include "fetrack/metrics.hpp"

#include <cmath>

#include "fetrack/losses.hpp"

namespace fetrack {

double pixel_iou(const FrameBox& a, const FrameBox& b) {
  return box_iou(BoxF{a.cx, a.cy, a.w, a.h}, BoxF{b.cx, b.cy, b.w, b.h});
}

Metrics eval_metrics(const std::vector<TrackRecord>& records) {
  FETRACK_CHECK_VALUE(!records.empty(), "eval_metrics: no records");
  const double n = double(records.size());
  Metrics m;

  for (int i = 0; i < 20; ++i) {
    const double thr = 0.05 * double(i);
    std::int64_t hit = 0;
    for (const auto& r : records)
      if (pixel_iou(r.pred, r.gt) > thr) ++hit;
    m.sr += 100.0 * double(hit) / n / 20.0;
  }

  std::int64_t close = 0;
  for (const auto& r : records) {
    const double err = std::hypot(r.pred.cx - r.gt.cx, r.pred.cy - r.gt.cy);
    if (err <= 20.0) ++close;
  }
  m.pr = 100.0 * double(close) / n;

  for (int i = 0; i < 50; ++i) {
    const double thr = 0.01 * double(i);
    std::int64_t hit = 0;
    for (const auto& r : records) {
      FETRACK_CHECK_VALUE(r.gt.w > 0.0 && r.gt.h > 0.0, "eval_metrics: degenerate gt box");
      const double nerr = std::hypot((r.pred.cx - r.gt.cx) / r.gt.w, (r.pred.cy - r.gt.cy) / r.gt.h);
      if (nerr <= thr) ++hit;
    }
    m.npr += 100.0 * double(hit) / n / 50.0;
  }
  return m;
}

}  // namespace fetrack
