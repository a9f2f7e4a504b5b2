#pragma once

// CLI entry points. Each command throws on failure; the dispatcher maps the
// error taxonomy onto process exit codes (validation 1, I/O 2, numerics 3).

#include <cstdint>
#include <string>

namespace fetrack {

struct SynthArgs {
  std::string config;
  std::string out;
  std::int64_t seed_override = -1;  // < 0: use the config seed
};

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string log;  // empty: log steps to stdout
  int precision = 32;
  std::int64_t seed_override = -1;
};

struct TrackArgs {
  std::string checkpoint;
  std::string sequence;
  std::string out;
  std::string dump_maps;  // empty: no per-frame score maps
  bool window = false;
  int precision = 32;
};

struct EvalArgs {
  std::string results;
  std::string sequence;    // gt.txt is taken from here unless --gt is given
  std::string gt;
  std::string fps_file;    // empty: probe <results>.time
  std::string config;      // either of these fills the params/flops fields
  std::string checkpoint;
};

struct BenchArgs {
  std::string config;
  std::string checkpoint;
};

int cmd_synth(const SynthArgs& a);
int cmd_train(const TrainArgs& a);
int cmd_track(const TrackArgs& a);
int cmd_eval(const EvalArgs& a);
int cmd_bench(const BenchArgs& a);

// Full invariant sweep in 64-bit; prints one PASS/FAIL line per check and
// returns nonzero if anything failed.
int run_selftest();

}  // namespace fetrack
