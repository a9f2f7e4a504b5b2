#include "fetrack/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace fetrack {

SequenceData load_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  SequenceData seq;
  seq.index = read_frame_index((fs::path(dir) / "frames.idx").string());
  if (seq.index.empty()) throw IoError(dir + ": frames.idx lists no frames");
  seq.gt = read_boxes((fs::path(dir) / "gt.txt").string());
  if (seq.gt.size() != seq.index.size())
    throw IoError(dir + ": gt.txt and frames.idx disagree on frame count");
  for (std::size_t i = 0; i < seq.gt.size(); ++i)
    if (seq.gt[i].frame_index != seq.index[i].index)
      throw IoError(dir + ": gt.txt frame indices do not match frames.idx");

  seq.frames.reserve(seq.index.size());
  for (const auto& e : seq.index) {
    DenseArray<double> img = read_image((fs::path(dir) / e.path).string());
    if (img.extent(2) == 1) {  // promote gray frames so both modalities share a shape
      DenseArray<double> rgb({img.extent(0), img.extent(1), 3});
      for (std::int64_t j = 0; j < img.extent(0) * img.extent(1); ++j)
        for (std::int64_t k = 0; k < 3; ++k) rgb.data()[j * 3 + k] = img.data()[j];
      img = std::move(rgb);
    }
    if (seq.frames.empty()) {
      seq.height = img.extent(0);
      seq.width = img.extent(1);
    } else if (img.extent(0) != seq.height || img.extent(1) != seq.width) {
      throw IoError(dir + ": frame sizes are inconsistent");
    }
    seq.frames.push_back(std::move(img));
  }

  const EventStream stream =
      read_events((fs::path(dir) / "events.txt").string(), seq.width, seq.height);
  seq.event_frames.reserve(seq.index.size());
  for (const auto& e : seq.index) {
    DenseArray<double> ev = stack_events_to_frame(stream, e.window);
    for (std::int64_t j = 0; j < ev.numel(); ++j) ev.data()[j] /= 255.0;
    seq.event_frames.push_back(std::move(ev));
  }
  return seq;
}

std::vector<std::string> list_sequences(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) throw IoError(root + ": no such directory");
  if (fs::exists(fs::path(root) / "frames.idx")) return {root};
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "frames.idx"))
      dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError(root + ": no sequences found (no frames.idx anywhere)");
  return dirs;
}

TrainSample make_train_sample(const SequenceData& seq, const RunConfig& cfg, Rng& rng) {
  const std::int64_t n = std::int64_t(seq.frames.size());
  FETRACK_CHECK_VALUE(n >= 1, "make_train_sample: empty sequence");
  const std::int64_t ft = rng.next_index(n);
  const std::int64_t lo = std::max<std::int64_t>(0, ft - cfg.sample_range);
  const std::int64_t hi = std::min<std::int64_t>(n - 1, ft + cfg.sample_range);
  const std::int64_t fs = lo + rng.next_index(hi - lo + 1);
  const double jx = rng.next_uniform(-cfg.jitter_center, cfg.jitter_center);
  const double jy = rng.next_uniform(-cfg.jitter_center, cfg.jitter_center);
  const double scale = std::exp2(rng.next_uniform(-cfg.jitter_logscale, cfg.jitter_logscale));

  const FrameBox& bt = seq.gt[static_cast<std::size_t>(ft)];
  const FrameBox& bs = seq.gt[static_cast<std::size_t>(fs)];
  TrainSample out;
  out.rgb_t = crop_patch(seq.frames[static_cast<std::size_t>(ft)], bt.cx, bt.cy, bt.w, bt.h, 2.0,
                         cfg.template_size);
  out.evt_t = crop_patch(seq.event_frames[static_cast<std::size_t>(ft)], bt.cx, bt.cy, bt.w, bt.h,
                         2.0, cfg.template_size);
  // Template and search crops of the two modalities share one window each, so
  // the streams stay pixel-aligned.
  CropInfo info;
  const double ctx = 4.0 * scale;
  out.rgb_s = crop_patch(seq.frames[static_cast<std::size_t>(fs)], bs.cx + jx, bs.cy + jy, bs.w,
                         bs.h, ctx, cfg.search_size, &info);
  out.evt_s = crop_patch(seq.event_frames[static_cast<std::size_t>(fs)], bs.cx + jx, bs.cy + jy,
                         bs.w, bs.h, ctx, cfg.search_size);
  out.gt_box.cx = (bs.cx - double(info.x0)) / double(info.side);
  out.gt_box.cy = (bs.cy - double(info.y0)) / double(info.side);
  out.gt_box.w = bs.w / double(info.side);
  out.gt_box.h = bs.h / double(info.side);
  return out;
}

}  // namespace fetrack
