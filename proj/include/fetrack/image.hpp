#pragma once

// Binary pixmap I/O and the square crop-and-resize used to cut template and
// search patches out of full frames.
//
// Images are DenseArray<double> with shape (H, W, C), C = 1 or 3, values in
// [0, 1]. Files are raw P5 (gray) / P6 (rgb) pixmaps with maxval 255.

#include <cmath>
#include <cstdint>
#include <string>

#include "fetrack/array.hpp"
#include "fetrack/common.hpp"

namespace fetrack {

DenseArray<double> read_image(const std::string& path);
void write_image(const std::string& path, const DenseArray<double>& img);

// Geometry of a crop, kept so patch-space boxes can be mapped back to pixels:
//   px = x0 + bx * side,  py = y0 + by * side,  pw = bw * side.
struct CropInfo {
  std::int64_t x0 = 0;
  std::int64_t y0 = 0;
  std::int64_t side = 0;
};

// Bilinear resample with half-pixel centers. Exact identity when the output
// shape equals the input shape.
template <typename T>
DenseArray<T> resize_bilinear(const DenseArray<T>& img, std::int64_t oh, std::int64_t ow) {
  FETRACK_CHECK_DIM(img.ndim() == 3, "resize_bilinear: want (H, W, C)");
  FETRACK_CHECK_VALUE(oh > 0 && ow > 0, "resize_bilinear: output must be positive");
  const std::int64_t ih = img.extent(0), iw = img.extent(1), c = img.extent(2);
  DenseArray<T> out({oh, ow, c});
  const double sy = double(ih) / double(oh);
  const double sx = double(iw) / double(ow);
  for (std::int64_t oy = 0; oy < oh; ++oy) {
    double fy = (double(oy) + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), double(ih - 1));
    const std::int64_t y0 = std::min<std::int64_t>(std::int64_t(fy), ih - 1);
    const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, ih - 1);
    const double wy = fy - double(y0);
    for (std::int64_t ox = 0; ox < ow; ++ox) {
      double fx = (double(ox) + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), double(iw - 1));
      const std::int64_t x0 = std::min<std::int64_t>(std::int64_t(fx), iw - 1);
      const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, iw - 1);
      const double wx = fx - double(x0);
      for (std::int64_t k = 0; k < c; ++k) {
        const double top = double(img.at3(y0, x0, k)) * (1.0 - wx) + double(img.at3(y0, x1, k)) * wx;
        const double bot = double(img.at3(y1, x0, k)) * (1.0 - wx) + double(img.at3(y1, x1, k)) * wx;
        out.at3(oy, ox, k) = T(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

// Cuts a square window of side sqrt(w * h) * context centered on (cx, cy) and
// resizes it to (out, out, C). Pixels outside the frame are filled with the
// per-channel mean of the in-frame part of the window. The integer side is
// fixed before the corner so the requested center lands within half a pixel
// of the patch center.
template <typename T>
DenseArray<T> crop_patch(const DenseArray<T>& frame, double cx, double cy, double w, double h,
                         double context, std::int64_t out, CropInfo* info = nullptr) {
  FETRACK_CHECK_DIM(frame.ndim() == 3, "crop_patch: want (H, W, C)");
  FETRACK_CHECK_VALUE(std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h),
                      "crop_patch: box must be finite");
  FETRACK_CHECK_VALUE(w > 0.0 && h > 0.0, "crop_patch: box sides must be positive");
  FETRACK_CHECK_VALUE(context > 0.0 && out > 0, "crop_patch: context and out must be positive");
  FETRACK_CHECK_VALUE(std::sqrt(w * h) * context < 1e9, "crop_patch: window absurdly large");
  const std::int64_t ih = frame.extent(0), iw = frame.extent(1), c = frame.extent(2);
  const double side_f = std::sqrt(w * h) * context;
  const std::int64_t side = std::max<std::int64_t>(1, std::llround(side_f));
  const std::int64_t x0 = std::llround(cx - double(side) / 2.0);
  const std::int64_t y0 = std::llround(cy - double(side) / 2.0);
  if (info) *info = CropInfo{x0, y0, side};

  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  std::int64_t valid = 0;
  for (std::int64_t y = std::max<std::int64_t>(0, y0); y < std::min(ih, y0 + side); ++y)
    for (std::int64_t x = std::max<std::int64_t>(0, x0); x < std::min(iw, x0 + side); ++x) {
      for (std::int64_t k = 0; k < c; ++k) mean[static_cast<std::size_t>(k)] += double(frame.at3(y, x, k));
      ++valid;
    }
  FETRACK_CHECK_VALUE(valid > 0, "crop_patch: window does not intersect the frame");
  for (auto& m : mean) m /= double(valid);

  DenseArray<T> win({side, side, c});
  for (std::int64_t y = 0; y < side; ++y)
    for (std::int64_t x = 0; x < side; ++x) {
      const std::int64_t sy = y0 + y, sx = x0 + x;
      const bool in = sy >= 0 && sy < ih && sx >= 0 && sx < iw;
      for (std::int64_t k = 0; k < c; ++k)
        win.at3(y, x, k) = in ? frame.at3(sy, sx, k) : T(mean[static_cast<std::size_t>(k)]);
    }
  if (side == out) return win;
  return resize_bilinear(win, out, out);
}

}  // namespace fetrack
