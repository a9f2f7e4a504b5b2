#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "fetrack/commands.hpp"
#include "fetrack/common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"frame/event fusion tracker"};
  app.require_subcommand(1);
  app.fallthrough();

  int precision = 32;
  int workers = 1;
  app.add_option("--precision", precision, "float width for model math")
      ->check(CLI::IsMember({32, 64}));
  app.add_option("--workers", workers, "worker threads for the parallel scan")
      ->check(CLI::PositiveNumber);

  fetrack::SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate synthetic frame/event sequences");
  c_synth->add_option("--config", synth.config, "run configuration file")->required();
  c_synth->add_option("--out", synth.out, "output dataset directory")->required();
  c_synth->add_option("--seed", synth.seed_override, "override the config seed");

  fetrack::TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train a tracker on a dataset directory");
  c_train->add_option("--config", train.config, "run configuration file")->required();
  c_train->add_option("--data", train.data, "dataset directory (sequences of frames + events)")
      ->required();
  c_train->add_option("--out", train.out, "checkpoint path to write")->required();
  c_train->add_option("--log", train.log, "step loss log file (default: stdout)");
  c_train->add_option("--seed", train.seed_override, "override the config seed");

  fetrack::TrackArgs track;
  auto* c_track = app.add_subcommand("track", "run a checkpoint over one sequence");
  c_track->add_option("--checkpoint", track.checkpoint, "trained checkpoint")->required();
  c_track->add_option("--sequence", track.sequence, "sequence directory")->required();
  c_track->add_option("--out", track.out, "predicted box file to write")->required();
  c_track->add_flag("--window", track.window, "apply a cosine window to the score map");
  c_track->add_option("--dump-maps", track.dump_maps, "directory for per-frame score maps");

  fetrack::EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "score predictions against ground truth");
  c_eval->add_option("--results", eval.results, "predicted box file")->required();
  c_eval->add_option("--sequence", eval.sequence, "sequence directory (provides gt.txt)");
  c_eval->add_option("--gt", eval.gt, "explicit ground-truth box file");
  c_eval->add_option("--fps-file", eval.fps_file, "timing sidecar (default: <results>.time)");
  c_eval->add_option("--config", eval.config, "config for the params/flops report");
  c_eval->add_option("--checkpoint", eval.checkpoint, "checkpoint for the params/flops report");

  fetrack::BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "report parameter and flop counts");
  c_bench->add_option("--config", bench.config, "run configuration file");
  c_bench->add_option("--checkpoint", bench.checkpoint, "trained checkpoint");

  auto* c_self = app.add_subcommand("selftest", "run the built-in invariant sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  fetrack::set_workers(workers);
  train.precision = precision;
  track.precision = precision;

  try {
    if (c_synth->parsed()) return fetrack::cmd_synth(synth);
    if (c_train->parsed()) return fetrack::cmd_train(train);
    if (c_track->parsed()) return fetrack::cmd_track(track);
    if (c_eval->parsed()) return fetrack::cmd_eval(eval);
    if (c_bench->parsed()) return fetrack::cmd_bench(bench);
    if (c_self->parsed()) return fetrack::run_selftest();
  } catch (const fetrack::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const fetrack::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
