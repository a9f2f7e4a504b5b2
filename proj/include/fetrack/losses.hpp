#pragma once

// Training objective for the center-point head:
//   total = score_focal + 14 * box_l1 + box_giou
// The score map trains everywhere with a penalty-reduced Gaussian focal loss;
// the box terms read the offset/size maps at the ground-truth center cell
// only. All loss math runs in double regardless of the model precision.

#include <cmath>

#include "fetrack/array.hpp"
#include "fetrack/common.hpp"
#include "fetrack/head.hpp"

namespace fetrack {

constexpr double kFocalAlpha = 2.0;
constexpr double kFocalBeta = 4.0;
constexpr double kFocalClamp = 1e-6;
constexpr double kLossWeightScore = 1.0;
constexpr double kLossWeightL1 = 14.0;
constexpr double kLossWeightGiou = 1.0;

// Cell of the score grid containing a normalized center point.
inline std::pair<std::int64_t, std::int64_t> target_cell(const BoxF& gt, std::int64_t S) {
  auto cell = [S](double v) {
    std::int64_t c = static_cast<std::int64_t>(std::floor(v * static_cast<double>(S)));
    if (c < 0) c = 0;
    if (c >= S) c = S - 1;
    return c;
  };
  return {cell(gt.cy), cell(gt.cx)};
}

// Penalty-reduced focal loss over a sigmoid score map against a Gaussian
// target whose peak cells are exactly 1:
//   t == 1:  -(1-p)^alpha log(p)
//   t <  1:  -(1-t)^beta p^alpha log(1-p)
// normalized by the number of peak cells. Predictions clamp to
// [1e-6, 1 - 1e-6]; outside the clamp the gradient is zero.
template <typename T>
double focal_loss(const DenseArray<T>& pred, const DenseArray<T>& target,
                  DenseArray<T>* grad = nullptr) {
  FETRACK_CHECK_DIM(pred.same_shape(target), "focal_loss: shape mismatch");
  if (grad && !grad->same_shape(pred)) *grad = DenseArray<T>(pred.shape());
  std::int64_t npos = 0;
  for (std::int64_t i = 0; i < target.numel(); ++i)
    if (target[i] == T(1)) ++npos;
  FETRACK_CHECK_VALUE(npos > 0, "focal_loss: target has no peak cell");

  double loss = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double raw = static_cast<double>(pred[i]);
    const bool clamped = raw < kFocalClamp || raw > 1.0 - kFocalClamp;
    const double p = std::min(std::max(raw, kFocalClamp), 1.0 - kFocalClamp);
    const double t = static_cast<double>(target[i]);
    double g = 0;
    if (t == 1.0) {
      const double q = 1.0 - p;
      loss -= q * q * std::log(p);
      g = 2.0 * q * std::log(p) - q * q / p;
    } else {
      const double w = std::pow(1.0 - t, kFocalBeta);
      loss -= w * p * p * std::log1p(-p);
      g = -w * (2.0 * p * std::log1p(-p) - p * p / (1.0 - p));
    }
    if (grad) (*grad)[i] = clamped ? T(0) : static_cast<T>(g / static_cast<double>(npos));
  }
  return loss / static_cast<double>(npos);
}

// ------------------------------------------------------------ box geometry

inline double box_iou(const BoxF& a, const BoxF& b) {
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
  const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
  const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct BoxGrad {
  double cx = 0, cy = 0, w = 0, h = 0;
};

// loss = 1 - GIoU = 2 - I/U - U/E. Gradients are with respect to the
// predicted box only; min/max kinks take the one-sided derivative.
inline double giou_loss(const BoxF& p, const BoxF& g, BoxGrad* grad = nullptr) {
  const double px0 = p.cx - p.w / 2, px1 = p.cx + p.w / 2;
  const double py0 = p.cy - p.h / 2, py1 = p.cy + p.h / 2;
  const double gx0 = g.cx - g.w / 2, gx1 = g.cx + g.w / 2;
  const double gy0 = g.cy - g.h / 2, gy1 = g.cy + g.h / 2;

  const double area_p = p.w * p.h, area_g = g.w * g.h;
  const double iw = std::min(px1, gx1) - std::max(px0, gx0);
  const double ih = std::min(py1, gy1) - std::max(py0, gy0);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = area_p + area_g - inter;
  const double ew = std::max(px1, gx1) - std::min(px0, gx0);
  const double eh = std::max(py1, gy1) - std::min(py0, gy0);
  const double enc = ew * eh;
  FETRACK_CHECK_VALUE(uni > 0 && enc > 0, "giou_loss: degenerate boxes");

  const double loss = 2.0 - inter / uni - uni / enc;
  if (!grad) return loss;

  // Partials of the loss with respect to the intermediates; dU/dI = -1 folds
  // the union's dependence on the intersection into dI.
  const double dl_dA = inter / (uni * uni) - 1.0 / enc;
  const double dl_dI = -1.0 / uni - inter / (uni * uni) + 1.0 / enc;
  const double dl_dE = uni / (enc * enc);

  // Corner partials. i*_lo/hi mark which box attains each min/max.
  double dI_px0 = 0, dI_px1 = 0, dI_py0 = 0, dI_py1 = 0;
  if (inter > 0) {
    dI_px0 = (px0 > gx0) ? -ih : 0.0;
    dI_px1 = (px1 < gx1) ? ih : 0.0;
    dI_py0 = (py0 > gy0) ? -iw : 0.0;
    dI_py1 = (py1 < gy1) ? iw : 0.0;
  }
  const double dE_px0 = (px0 < gx0) ? -eh : 0.0;
  const double dE_px1 = (px1 > gx1) ? eh : 0.0;
  const double dE_py0 = (py0 < gy0) ? -ew : 0.0;
  const double dE_py1 = (py1 > gy1) ? ew : 0.0;
  const double dA_px0 = -p.h, dA_px1 = p.h, dA_py0 = -p.w, dA_py1 = p.w;

  const double d_px0 = dl_dA * dA_px0 + dl_dI * dI_px0 + dl_dE * dE_px0;
  const double d_px1 = dl_dA * dA_px1 + dl_dI * dI_px1 + dl_dE * dE_px1;
  const double d_py0 = dl_dA * dA_py0 + dl_dI * dI_py0 + dl_dE * dE_py0;
  const double d_py1 = dl_dA * dA_py1 + dl_dI * dI_py1 + dl_dE * dE_py1;

  grad->cx = d_px0 + d_px1;
  grad->cy = d_py0 + d_py1;
  grad->w = 0.5 * (d_px1 - d_px0);
  grad->h = 0.5 * (d_py1 - d_py0);
  return loss;
}

// Mean absolute difference over the four normalized coordinates.
inline double l1_loss(const BoxF& p, const BoxF& g, BoxGrad* grad = nullptr) {
  const double d[4] = {p.cx - g.cx, p.cy - g.cy, p.w - g.w, p.h - g.h};
  double loss = 0;
  for (double v : d) loss += std::abs(v);
  loss /= 4.0;
  if (grad) {
    auto sgn = [](double v) { return v > 0 ? 0.25 : (v < 0 ? -0.25 : 0.0); };
    grad->cx = sgn(d[0]);
    grad->cy = sgn(d[1]);
    grad->w = sgn(d[2]);
    grad->h = sgn(d[3]);
  }
  return loss;
}

template <typename T>
struct LossOut {
  double total = 0, score = 0, l1 = 0, giou = 0;
  DenseArray<T> g_score;   // (S, S, 1)
  DenseArray<T> g_offset;  // (S, S, 2)
  DenseArray<T> g_size;    // (S, S, 2)
};

// Full objective against one ground-truth box. The regression terms read the
// maps at the ground-truth center cell, so their gradients land there alone.
template <typename T>
LossOut<T> compute_tracking_loss(const HeadOut<T>& maps, const BoxF& gt) {
  const std::int64_t S = maps.score.extent(0);
  LossOut<T> out;
  DenseArray<T> target = make_cls_target<T>(gt, S);
  out.g_score = DenseArray<T>(maps.score.shape());
  out.score = focal_loss(maps.score, target, &out.g_score);

  auto [ci, cj] = target_cell(gt, S);
  BoxF pred;
  pred.cx = (static_cast<double>(cj) + static_cast<double>(maps.offset.at3(ci, cj, 0))) /
            static_cast<double>(S);
  pred.cy = (static_cast<double>(ci) + static_cast<double>(maps.offset.at3(ci, cj, 1))) /
            static_cast<double>(S);
  pred.w = maps.size.at3(ci, cj, 0);
  pred.h = maps.size.at3(ci, cj, 1);

  BoxGrad g_l1, g_giou;
  out.l1 = l1_loss(pred, gt, &g_l1);
  out.giou = giou_loss(pred, gt, &g_giou);
  out.total = kLossWeightScore * out.score + kLossWeightL1 * out.l1 + kLossWeightGiou * out.giou;

  for (std::int64_t i = 0; i < out.g_score.numel(); ++i)
    out.g_score[i] = static_cast<T>(kLossWeightScore * static_cast<double>(out.g_score[i]));

  out.g_offset = DenseArray<T>(maps.offset.shape());
  out.g_size = DenseArray<T>(maps.size.shape());
  const double dcx = kLossWeightL1 * g_l1.cx + kLossWeightGiou * g_giou.cx;
  const double dcy = kLossWeightL1 * g_l1.cy + kLossWeightGiou * g_giou.cy;
  const double dw = kLossWeightL1 * g_l1.w + kLossWeightGiou * g_giou.w;
  const double dh = kLossWeightL1 * g_l1.h + kLossWeightGiou * g_giou.h;
  out.g_offset.at3(ci, cj, 0) = static_cast<T>(dcx / static_cast<double>(S));
  out.g_offset.at3(ci, cj, 1) = static_cast<T>(dcy / static_cast<double>(S));
  out.g_size.at3(ci, cj, 0) = static_cast<T>(dw);
  out.g_size.at3(ci, cj, 1) = static_cast<T>(dh);
  return out;
}

}  // namespace fetrack
