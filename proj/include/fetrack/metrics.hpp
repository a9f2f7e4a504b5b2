#pragma once

// Tracking quality summaries over a sequence of per-frame predictions.

#include <vector>

#include "fetrack/common.hpp"
#include "fetrack/events.hpp"

namespace fetrack {

struct TrackRecord {
  FrameBox pred;     // pixels
  FrameBox gt;       // pixels
  double seconds = 0;  // wall time spent producing pred (excluded from metrics)
};

struct Metrics {
  double sr = 0;   // success: mean over IoU thresholds 0.05*i, i = 0..19, of 100 * frac(IoU > thr)
  double pr = 0;   // precision: 100 * frac(center error <= 20 px)
  double npr = 0;  // normalized precision: mean over thresholds 0.01*i, i = 0..49,
                   // of 100 * frac(hypot(dx/gt_w, dy/gt_h) <= thr)
};

// Throws ValueError on an empty record list or a degenerate ground-truth box.
Metrics eval_metrics(const std::vector<TrackRecord>& records);

// Intersection over union of two pixel-space center+size boxes.
double pixel_iou(const FrameBox& a, const FrameBox& b);

}  // namespace fetrack
