#include <cmath>
#include <cstdio>
#include <array>
#include <filesystem>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "fetrack/bench.hpp"
#include "fetrack/data.hpp"
#include "fetrack/grad_check.hpp"
#include "fetrack/synth.hpp"
#include "fetrack/track.hpp"
#include "fetrack/train.hpp"

using namespace fetrack;

namespace {

std::string tmp_dir(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Small geometry that still exercises every stage.
RunConfig tiny_cfg(const char* modality) {
  RunConfig cfg;
  cfg.channels = 8;
  cfg.depth = 1;
  cfg.state = 2;
  cfg.conv_width = 2;
  cfg.expand = 2;
  cfg.patch = 4;
  cfg.template_size = 8;
  cfg.search_size = 16;
  cfg.modality = modality;
  cfg.width = 48;
  cfg.height = 40;
  cfg.frames = 8;
  cfg.object_size = 10.0;
  return cfg;
}

SequenceData make_sequence(const RunConfig& cfg, std::uint64_t seed, const char* name) {
  const std::string dir = tmp_dir(name);
  std::filesystem::remove_all(dir);
  write_sequence(dir, synth_sequence(cfg, seed));
  SequenceData seq = load_sequence(dir);
  std::filesystem::remove_all(dir);
  return seq;
}

}  // namespace

TEST_CASE("loaded sequences carry aligned frames, events, and boxes") {
  RunConfig cfg = tiny_cfg("fused");
  SequenceData seq = make_sequence(cfg, 17, "fetrack_load");
  REQUIRE(std::int64_t(seq.frames.size()) == cfg.frames);
  REQUIRE(seq.event_frames.size() == seq.frames.size());
  REQUIRE(seq.gt.size() == seq.frames.size());
  CHECK(seq.width == cfg.width);
  CHECK(seq.height == cfg.height);
  for (const auto& f : seq.frames) {
    CHECK(f.extent(0) == cfg.height);
    CHECK(f.extent(2) == 3);
  }
  // Event frames are normalized byte values; neutral gray dominates.
  const auto& ev = seq.event_frames[1];
  std::int64_t neutral = 0;
  for (std::int64_t j = 0; j < ev.extent(0) * ev.extent(1); ++j) {
    const double v = ev.data()[j * 3];
    CHECK(v >= 64.0 / 255.0 - 1e-12);
    CHECK(v <= 192.0 / 255.0 + 1e-12);
    if (v == 128.0 / 255.0) ++neutral;
  }
  CHECK(neutral > ev.extent(0) * ev.extent(1) / 2);
}

TEST_CASE("sequence listing finds manifests and rejects empty roots") {
  const std::string root = tmp_dir("fetrack_root");
  std::filesystem::remove_all(root);
  RunConfig cfg = tiny_cfg("fused");
  cfg.frames = 3;
  write_sequence(root + "/seq_b", synth_sequence(cfg, 2));
  write_sequence(root + "/seq_a", synth_sequence(cfg, 3));
  auto dirs = list_sequences(root);
  REQUIRE(dirs.size() == 2);
  CHECK(dirs[0] < dirs[1]);  // sorted
  // A sequence dir used directly lists itself.
  CHECK(list_sequences(root + "/seq_a").size() == 1);
  std::filesystem::remove_all(root);
  CHECK_THROWS_AS((void)list_sequences(root), IoError);
}

TEST_CASE("training samples put the jittered target inside the search patch") {
  RunConfig cfg = tiny_cfg("fused");
  SequenceData seq = make_sequence(cfg, 19, "fetrack_sample");
  Rng rng(5, 0x646174);
  for (int i = 0; i < 25; ++i) {
    TrainSample s = make_train_sample(seq, cfg, rng);
    CHECK(s.rgb_t.extent(0) == cfg.template_size);
    CHECK(s.rgb_s.extent(0) == cfg.search_size);
    CHECK(s.evt_t.extent(0) == cfg.template_size);
    CHECK(s.evt_s.extent(0) == cfg.search_size);
    CHECK(s.rgb_s.extent(2) == 3);
    CHECK(s.evt_s.extent(2) == 3);
    // Context 4 crop centered within +-6 px of the target keeps the box well
    // inside the unit patch.
    CHECK(s.gt_box.cx > 0.0);
    CHECK(s.gt_box.cx < 1.0);
    CHECK(s.gt_box.cy > 0.0);
    CHECK(s.gt_box.cy < 1.0);
    CHECK(s.gt_box.w > 0.0);
    CHECK(s.gt_box.w < 1.0);
  }
  // Same rng state, same sample.
  Rng r1(5, 0x646174), r2(5, 0x646174);
  TrainSample a = make_train_sample(seq, cfg, r1);
  TrainSample b = make_train_sample(seq, cfg, r2);
  CHECK(max_abs_diff(a.rgb_s, b.rgb_s) == 0.0);
  CHECK(a.gt_box.cx == b.gt_box.cx);
}

TEST_CASE("rgb stream ignores the event input once fusion outputs are zeroed") {
  RunConfig cfg = tiny_cfg("fused");
  TrackerModel<double> model(cfg);
  model.init_params(3);
  model.visit([](const std::string& name, Param<double>& p) {
    if (name.rfind("fusion.out_", 0) == 0) p.value.fill(0.0);
  });

  SequenceData seq = make_sequence(cfg, 23, "fetrack_plumb");
  Rng rng(7, 0x646174);
  TrainSample s = make_train_sample(seq, cfg, rng);
  SampleInput<double> real = to_input<double>(s);
  SampleInput<double> neutral = real;
  neutral.evt_t.fill(128.0 / 255.0);
  neutral.evt_s.fill(128.0 / 255.0);

  ModelCtx<double> ca, cb;
  (void)model.forward(real, false, ca);
  (void)model.forward(neutral, false, cb);
  const std::int64_t S = cfg.score_cells(), C = cfg.channels;
  double d = 0;
  for (std::int64_t i = 0; i < S * S; ++i)
    for (std::int64_t c = 0; c < C; ++c)
      d = std::max(d, std::abs(ca.grid[i * 2 * C + c] - cb.grid[i * 2 * C + c]));
  CHECK(d == 0.0);  // rgb channels bitwise equal
  // The event half of the grid does change.
  double de = 0;
  for (std::int64_t i = 0; i < S * S; ++i)
    for (std::int64_t c = 0; c < C; ++c)
      de = std::max(de, std::abs(ca.grid[i * 2 * C + C + c] - cb.grid[i * 2 * C + C + c]));
  CHECK(de > 0.0);
}

TEST_CASE("a batch of one reproduces the single-sample training forward") {
  RunConfig cfg = tiny_cfg("fused");
  SequenceData seq = make_sequence(cfg, 29, "fetrack_b1");
  Rng rng(11, 0x646174);
  SampleInput<double> in = to_input<double>(make_train_sample(seq, cfg, rng));

  TrackerModel<double> a(cfg), b(cfg);
  a.init_params(3);
  b.init_params(3);
  ModelCtx<double> ca;
  HeadOut<double> ma = a.forward(in, true, ca);
  BatchCtx<double> cb;
  HeadOut<double> mb1 = b.forward_batch({in}, cb);
  HeadOut<double> mb = slice_maps(mb1, 0);
  CHECK(max_abs_diff(ma.score, mb.score) == 0.0);
  CHECK(max_abs_diff(ma.offset, mb.offset) == 0.0);
  CHECK(max_abs_diff(ma.size, mb.size) == 0.0);

  // Running statistics get the same nudge from either path.
  std::vector<DenseArray<double>*> sa, sb;
  a.visit_state([&](const std::string&, DenseArray<double>& s) { sa.push_back(&s); });
  b.visit_state([&](const std::string&, DenseArray<double>& s) { sb.push_back(&s); });
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(max_abs_diff(*sa[i], *sb[i]) == 0.0);
}

TEST_CASE("batched head gradients match finite differences across samples") {
  RunConfig cfg = tiny_cfg("fused");
  SequenceData seq = make_sequence(cfg, 31, "fetrack_bgrad");
  Rng rng(13, 0x646174);
  std::vector<SampleInput<double>> batch;
  batch.push_back(to_input<double>(make_train_sample(seq, cfg, rng)));
  batch.push_back(to_input<double>(make_train_sample(seq, cfg, rng)));

  TrackerModel<double> model(cfg);
  model.init_params(7);
  const std::int64_t S = cfg.score_cells(), B = 2;
  DenseArray<double> ws({B, S, S, 1}), wo({B, S, S, 2}), wz({B, S, S, 2});
  Rng wr(7, 0x776569);
  for (auto* a : {&ws, &wo, &wz})
    for (std::int64_t i = 0; i < a->numel(); ++i) (*a)[i] = wr.next_gaussian();

  // Batch statistics couple the samples, so the objective must span both.
  auto objective = [&]() {
    BatchCtx<double> ctx;
    HeadOut<double> maps = model.forward_batch(batch, ctx);
    double v = 0;
    for (std::int64_t i = 0; i < ws.numel(); ++i) v += ws[i] * maps.score[i];
    for (std::int64_t i = 0; i < wo.numel(); ++i) v += wo[i] * maps.offset[i];
    for (std::int64_t i = 0; i < wz.numel(); ++i) v += wz[i] * maps.size[i];
    return v;
  };

  model.zero_grads();
  {
    BatchCtx<double> ctx;
    (void)model.forward_batch(batch, ctx);
    model.backward_batch(ctx, ws, wo, wz);
  }

  double worst = 0;
  const double h = 1e-5;
  Rng pick(9, 0x706b);
  model.visit([&](const std::string&, Param<double>& p) {
    for (int k = 0; k < 2; ++k) {
      const std::int64_t i = pick.next_index(p.value.numel());
      const double keep = p.value[i];
      p.value[i] = keep + h;
      const double up = objective();
      p.value[i] = keep - h;
      const double dn = objective();
      p.value[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double rel = std::abs(fd - p.grad[i]) / std::max({std::abs(fd), std::abs(p.grad[i]), 1e-5});
      worst = std::max(worst, rel);
    }
  });
  CHECK(worst <= 1e-4);
}

TEST_CASE("an all-zero head scores one half everywhere") {
  RunConfig cfg = tiny_cfg("rgb");
  TrackerModel<double> model(cfg);
  model.init_params(4);
  model.visit([](const std::string& name, Param<double>& p) {
    if (name.rfind("head.", 0) == 0) p.value.fill(0.0);
  });
  SequenceData seq = make_sequence(cfg, 29, "fetrack_zerohead");
  Rng rng(9, 0x646174);
  SampleInput<double> in = to_input<double>(make_train_sample(seq, cfg, rng));
  for (bool training : {true, false}) {
    ModelCtx<double> ctx;
    HeadOut<double> maps = model.forward(in, training, ctx);
    for (std::int64_t i = 0; i < maps.score.numel(); ++i) CHECK(maps.score[i] == 0.5);
  }
}

TEST_CASE("cosine window pulls the peak toward the center but respects scale") {
  const std::int64_t S = 5;
  HeadOut<double> maps;
  maps.score = DenseArray<double>({S, S, 1});
  maps.offset = DenseArray<double>({S, S, 2});
  maps.size = DenseArray<double>::full({S, S, 2}, 0.25);
  maps.score.fill(0.1);
  maps.score.at3(0, 0, 0) = 0.9;  // strong border response
  maps.score.at3(2, 2, 0) = 0.6;  // weaker central one

  const BoxF raw = decode_bbox(maps);
  CHECK(raw.cx == doctest::Approx((0 + 0.0) / 5.0));
  const DenseArray<double> win = cosine_window(S);
  CHECK(win.at3(2, 2, 0) == doctest::Approx(1.0));
  CHECK(win.at3(0, 0, 0) == 0.0);
  const BoxF windowed = decode_bbox(maps, &win);
  CHECK(windowed.cx == doctest::Approx((2 + 0.0) / 5.0));
  CHECK(windowed.cy == doctest::Approx((2 + 0.0) / 5.0));

  // Positive rescaling of the scores never changes the windowed argmax.
  for (std::int64_t i = 0; i < maps.score.numel(); ++i) maps.score[i] *= 7.5;
  const BoxF scaled = decode_bbox(maps, &win);
  CHECK(scaled.cx == windowed.cx);
  CHECK(scaled.cy == windowed.cy);
}

TEST_CASE("tracking emits one record per frame after the first") {
  RunConfig cfg = tiny_cfg("fused");
  TrackerModel<double> model(cfg);
  model.init_params(6);
  SequenceData seq = make_sequence(cfg, 31, "fetrack_track");
  const std::string dump = tmp_dir("fetrack_maps");
  std::filesystem::remove_all(dump);
  std::vector<TrackRecord> recs = track_sequence(model, seq, false, dump);
  REQUIRE(std::int64_t(recs.size()) == cfg.frames - 1);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].gt.frame_index == std::int64_t(i) + 1);
    CHECK(recs[i].pred.frame_index == std::int64_t(i) + 1);
    CHECK(recs[i].pred.cx >= 0.0);
    CHECK(recs[i].pred.cx <= double(cfg.width - 1));
    CHECK(recs[i].pred.w >= 1.0);
    CHECK(recs[i].seconds >= 0.0);
    char name[64];
    std::snprintf(name, sizeof name, "%s/score_%06lld.pgm", dump.c_str(),
                  static_cast<long long>(i + 1));
    DenseArray<double> map = read_image(name);
    CHECK(map.extent(0) == cfg.score_cells());
  }
  std::filesystem::remove_all(dump);
  // Identical model and sequence reproduce the same predictions.
  std::vector<TrackRecord> again = track_sequence(model, seq, false);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(again[i].pred.cx == recs[i].pred.cx);
    CHECK(again[i].pred.w == recs[i].pred.w);
  }
  // Windowed tracking also yields a full record list.
  CHECK(track_sequence(model, seq, true).size() == recs.size());
}

TEST_CASE("perfect predictions score one hundred across all metrics") {
  std::vector<TrackRecord> recs;
  for (int i = 1; i <= 5; ++i) {
    TrackRecord r;
    r.gt = FrameBox{i, 20.0 + i, 15.0, 9.0, 7.0};
    r.pred = r.gt;
    recs.push_back(r);
  }
  const Metrics m = eval_metrics(recs);
  CHECK(m.sr == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(m.pr == 100.0);
  CHECK(m.npr == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("training runs deterministically and writes one log line per step") {
  RunConfig cfg = tiny_cfg("fused");
  cfg.steps = 4;
  cfg.batch = 2;
  cfg.seed = 11;
  SequenceData seq = make_sequence(cfg, 37, "fetrack_train");
  std::vector<SequenceData> data;
  data.push_back(std::move(seq));

  std::ostringstream log_a;
  TrackerModel<double> ma(cfg);
  ma.init_params(static_cast<std::uint64_t>(cfg.seed));
  TrainStats sa = train_model(ma, data, cfg, &log_a);
  REQUIRE(sa.losses.size() == 4);
  for (double v : sa.losses) CHECK(std::isfinite(v));

  std::ostringstream log_b;
  TrackerModel<double> mb(cfg);
  mb.init_params(static_cast<std::uint64_t>(cfg.seed));
  TrainStats sb = train_model(mb, data, cfg, &log_b);
  for (std::size_t i = 0; i < 4; ++i) CHECK(sa.losses[i] == sb.losses[i]);
  CHECK(log_a.str() == log_b.str());

  std::int64_t lines = 0;
  for (char ch : log_a.str())
    if (ch == '\n') ++lines;
  CHECK(lines == 4);

  // The two runs left identical parameters behind.
  std::vector<double> pa, pb;
  ma.visit([&](const std::string&, Param<double>& p) {
    for (std::int64_t i = 0; i < p.value.numel(); ++i) pa.push_back(p.value[i]);
  });
  mb.visit([&](const std::string&, Param<double>& p) {
    for (std::int64_t i = 0; i < p.value.numel(); ++i) pb.push_back(p.value[i]);
  });
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("a short training run moves the loss down") {
  RunConfig cfg = tiny_cfg("rgb");
  cfg.steps = 60;
  cfg.batch = 2;
  cfg.lr = 3e-3;
  cfg.seed = 2;
  cfg.frames = 12;
  SequenceData seq = make_sequence(cfg, 41, "fetrack_learn");
  std::vector<SequenceData> data;
  data.push_back(std::move(seq));
  TrackerModel<double> model(cfg);
  model.init_params(static_cast<std::uint64_t>(cfg.seed));
  TrainStats st = train_model(model, data, cfg);
  CHECK(st.tail_mean(10) < st.head_mean(10));
}

TEST_CASE("parameter count sits in the documented band at full scale") {
  RunConfig cfg;
  cfg.channels = 192;
  cfg.depth = 12;
  cfg.state = 16;
  cfg.conv_width = 4;
  cfg.expand = 2;
  cfg.patch = 16;
  cfg.template_size = 128;
  cfg.search_size = 256;
  cfg.modality = "fused";
  const BenchInfo b = bench_config(cfg);
  CHECK(b.params >= 4000000);
  CHECK(b.params <= 14000000);
  CHECK(b.params_mb == doctest::Approx(double(b.params) * 4.0 / 1e6));
  CHECK(b.flops == 2 * estimate_macs(cfg));
  CHECK(b.flops > 0);
}

TEST_CASE("flop estimate is exactly affine in depth") {
  RunConfig cfg;
  cfg.channels = 192;
  cfg.depth = 12;
  cfg.state = 16;
  cfg.patch = 16;
  cfg.template_size = 128;
  cfg.search_size = 256;
  RunConfig c0 = cfg, c6 = cfg;
  c0.depth = 0;
  c6.depth = 6;
  CHECK(estimate_flops(cfg) + estimate_flops(c0) == 2 * estimate_flops(c6));
  // Holds for single-modality runs too.
  cfg.modality = "event";
  c0.modality = "event";
  c6.modality = "event";
  CHECK(estimate_flops(cfg) + estimate_flops(c0) == 2 * estimate_flops(c6));
}

TEST_CASE("doubling depth doubles block parameters with embeddings fixed") {
  RunConfig cfg = tiny_cfg("fused");
  auto split_params = [](const RunConfig& c) {
    TrackerModel<float> m(c);
    std::int64_t embed = 0, blocks = 0, rest = 0;
    m.visit([&](const std::string& name, Param<float>& p) {
      if (name.find(".embed") != std::string::npos) embed += p.value.numel();
      else if (name.find(".block") != std::string::npos) blocks += p.value.numel();
      else rest += p.value.numel();
    });
    return std::array<std::int64_t, 3>{embed, blocks, rest};
  };
  RunConfig deep = cfg;
  deep.depth = 2 * cfg.depth;
  const auto base = split_params(cfg);
  const auto doubled = split_params(deep);
  CHECK(doubled[0] == base[0]);
  CHECK(doubled[1] == 2 * base[1]);
  CHECK(doubled[2] == base[2]);

  const auto breakdown = param_breakdown(cfg);
  std::int64_t total = 0;
  for (const auto& [k, v] : breakdown) total += v;
  TrackerModel<float> m(cfg);
  CHECK(total == m.count_params());
  CHECK(breakdown.count("rgb") == 1);
  CHECK(breakdown.count("event") == 1);
  CHECK(breakdown.count("fusion") == 1);
  CHECK(breakdown.count("head") == 1);
}
