#include "fetrack/commands.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "fetrack/bench.hpp"
#include "fetrack/data.hpp"
#include "fetrack/synth.hpp"
#include "fetrack/track.hpp"
#include "fetrack/train.hpp"

namespace fetrack {
namespace {

RunConfig load_config(const std::string& path, std::int64_t seed_override) {
  RunConfig cfg = parse_config_file(path);
  if (seed_override >= 0) cfg.seed = seed_override;
  cfg.validate();
  return cfg;
}

template <typename T>
int train_impl(const TrainArgs& a) {
  const RunConfig cfg = load_config(a.config, a.seed_override);
  std::vector<SequenceData> data;
  for (const std::string& dir : list_sequences(a.data)) data.push_back(load_sequence(dir));

  TrackerModel<T> model(cfg);
  model.init_params(static_cast<std::uint64_t>(cfg.seed));

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!a.log.empty()) {
    log_file.open(a.log);
    if (!log_file) throw IoError(a.log + ": cannot open for writing");
    log = &log_file;
  }
  const TrainStats stats = train_model(model, data, cfg, log);
  model.save(a.out);
  std::printf("trained %lld steps on %zu sequence(s); loss %.6f -> %.6f; wrote %s\n",
              static_cast<long long>(cfg.steps), data.size(), stats.head_mean(100),
              stats.tail_mean(100), a.out.c_str());
  return 0;
}

template <typename T>
int track_impl(const TrackArgs& a) {
  TrackerModel<T> model = TrackerModel<T>::load(a.checkpoint);
  const SequenceData seq = load_sequence(a.sequence);
  const std::vector<TrackRecord> records = track_sequence(model, seq, a.window, a.dump_maps);

  std::vector<FrameBox> preds;
  double seconds = 0;
  for (const auto& r : records) {
    preds.push_back(r.pred);
    seconds += r.seconds;
  }
  write_boxes(a.out, preds);
  // Timing lives in a sidecar so the results file is a pure function of the
  // inputs.
  const double fps = seconds > 0 ? double(records.size()) / seconds : 0.0;
  std::ofstream side(a.out + ".time");
  if (!side) throw IoError(a.out + ".time: cannot open for writing");
  char buf[96];
  std::snprintf(buf, sizeof buf, "fps %.3f\nseconds %.6f\n", fps, seconds);
  side << buf;
  std::printf("tracked %zu frames at %.1f fps; wrote %s\n", records.size(), fps, a.out.c_str());
  return 0;
}

double read_fps_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::string key;
  double v = 0;
  while (in >> key >> v)
    if (key == "fps") return v;
  throw IoError(path + ": no fps entry");
}

}  // namespace

int cmd_synth(const SynthArgs& a) {
  const RunConfig cfg = load_config(a.config, a.seed_override);
  if (cfg.frames == 1)
    std::fprintf(stderr, "warning: frames = 1 leaves nothing to track after the template frame\n");
  std::error_code ec;
  std::filesystem::create_directories(a.out, ec);
  if (ec) throw IoError(a.out + ": cannot create output directory");
  for (std::int64_t s = 0; s < cfg.sequences; ++s) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%03lld", static_cast<long long>(s));
    const SynthSequence seq =
        synth_sequence(cfg, static_cast<std::uint64_t>(cfg.seed) + static_cast<std::uint64_t>(s));
    const std::string dir = (std::filesystem::path(a.out) / name).string();
    write_sequence(dir, seq);
    std::printf("wrote %s: frames=%zu events=%zu\n", dir.c_str(), seq.frames.size(),
                seq.stream.events.size());
  }
  return 0;
}

int cmd_train(const TrainArgs& a) {
  return a.precision == 64 ? train_impl<double>(a) : train_impl<float>(a);
}

int cmd_track(const TrackArgs& a) {
  return a.precision == 64 ? track_impl<double>(a) : track_impl<float>(a);
}

int cmd_eval(const EvalArgs& a) {
  const std::vector<FrameBox> preds = read_boxes(a.results);
  std::string gt_path = a.gt;
  if (gt_path.empty()) {
    if (a.sequence.empty()) throw ConfigError("eval: need --sequence or --gt");
    gt_path = (std::filesystem::path(a.sequence) / "gt.txt").string();
  }
  const std::vector<FrameBox> gts = read_boxes(gt_path);

  std::map<std::int64_t, FrameBox> by_frame;
  for (const auto& g : gts) by_frame[g.frame_index] = g;
  std::vector<TrackRecord> records;
  for (const auto& p : preds) {
    auto it = by_frame.find(p.frame_index);
    if (it == by_frame.end()) continue;
    TrackRecord r;
    r.pred = p;
    r.gt = it->second;
    records.push_back(r);
  }
  FETRACK_CHECK_VALUE(!records.empty(), "eval: no frames shared between results and ground truth");
  const Metrics m = eval_metrics(records);

  std::printf("sr = %.6f\n", m.sr);
  std::printf("pr = %.6f\n", m.pr);
  std::printf("npr = %.6f\n", m.npr);

  std::string fps_file = a.fps_file;
  if (fps_file.empty() && std::filesystem::exists(a.results + ".time"))
    fps_file = a.results + ".time";
  if (!fps_file.empty()) std::printf("fps = %.3f\n", read_fps_sidecar(fps_file));
  else std::printf("fps = -\n");

  if (!a.checkpoint.empty()) {
    TrackerModel<float> model = TrackerModel<float>::load(a.checkpoint);
    std::printf("params = %" PRId64 "\n", model.count_params());
    std::printf("flops = %" PRId64 "\n", estimate_flops(model.cfg));
  } else if (!a.config.empty()) {
    RunConfig cfg = parse_config_file(a.config);
    cfg.validate();
    const BenchInfo b = bench_config(cfg);
    std::printf("params = %" PRId64 "\n", b.params);
    std::printf("flops = %" PRId64 "\n", b.flops);
  } else {
    std::printf("params = -\n");
    std::printf("flops = -\n");
  }
  return 0;
}

int cmd_bench(const BenchArgs& a) {
  if (a.config.empty() == a.checkpoint.empty())
    throw ConfigError("bench: give exactly one of --config or --checkpoint");
  RunConfig cfg;
  std::int64_t params = 0;
  std::map<std::string, std::int64_t> groups;
  if (!a.checkpoint.empty()) {
    TrackerModel<float> model = TrackerModel<float>::load(a.checkpoint);
    cfg = model.cfg;
    params = model.count_params();
    model.visit([&](const std::string& name, Param<float>& p) {
      groups[name.substr(0, name.find('.'))] += p.value.numel();
    });
  } else {
    cfg = parse_config_file(a.config);
    cfg.validate();
    params = bench_config(cfg).params;
    groups = param_breakdown(cfg);
  }
  std::printf("params = %" PRId64 "\n", params);
  std::printf("params_millions = %.2f\n", double(params) / 1e6);
  std::printf("reference_millions = 7.00\n");
  std::printf("storage_mb_fp32 = %.2f\n", double(params) * 4.0 / 1e6);
  std::printf("flops = %" PRId64 "\n", estimate_flops(cfg));
  for (const auto& [k, v] : groups) std::printf("params.%s = %" PRId64 "\n", k.c_str(), v);
  return 0;
}

}  // namespace fetrack
