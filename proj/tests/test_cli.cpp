#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>

#include "fetrack/bench.hpp"
#include "fetrack/config.hpp"
#include "fetrack/model.hpp"

// End-to-end checks of the installed command line: exit codes, byte-level
// reproducibility, and the synth -> train -> track -> eval loop. Each test
// shells out to the real binary (path baked in at configure time).

namespace fs = std::filesystem;
using namespace fetrack;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd =
      std::string(FETRACK_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = status < 0 ? status : WEXITSTATUS(status);
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path d = fs::temp_directory_path() / ("fetrack_cli_" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const char* kTinyCfg =
    "channels = 8\n"
    "depth = 1\n"
    "state = 2\n"
    "conv_width = 2\n"
    "expand = 2\n"
    "patch = 4\n"
    "template_size = 8\n"
    "search_size = 16\n"
    "steps = 6\n"
    "batch = 2\n"
    "lr = 1e-3\n"
    "seed = 3\n"
    "width = 48\n"
    "height = 40\n"
    "frames = 24\n"
    "sequences = 2\n"
    "object_size = 10\n"
    "motion = linear\n"
    "speed = 1.5\n";

// Recursively compare two directory trees byte for byte.
bool trees_equal(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> ra, rb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) ra.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) rb.push_back(fs::relative(e.path(), b));
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  if (ra != rb) return false;
  for (const auto& rel : ra)
    if (slurp(a / rel) != slurp(b / rel)) return false;
  return true;
}

}  // namespace

TEST_CASE("usage errors and the error taxonomy map to distinct exit codes") {
  const fs::path d = fresh_dir("codes");
  CHECK(run_cli("--help", d).code == 0);
  CHECK(run_cli("definitely-not-a-subcommand", d).code == 1);
  CHECK(run_cli("synth --config x.cfg", d).code == 1);  // missing required --out
  CHECK(run_cli("synth --no-such-flag", d).code == 1);

  // Missing file: an I/O failure.
  RunResult r = run_cli("synth --config " + (d / "absent.cfg").string() + " --out " +
                            (d / "o").string(),
                        d);
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") != std::string::npos);

  // Present but invalid: a validation failure.
  write_text(d / "bad.cfg", "channelz = 8\n");
  r = run_cli("synth --config " + (d / "bad.cfg").string() + " --out " + (d / "o").string(), d);
  CHECK(r.code == 1);
  CHECK(r.err.find("channelz") != std::string::npos);

  write_text(d / "bad2.cfg", "patch = 7\nsearch_size = 16\n");
  r = run_cli("bench --config " + (d / "bad2.cfg").string(), d);
  CHECK(r.code == 1);
  fs::remove_all(d);
}

TEST_CASE("synthesis is byte identical across same-seed runs") {
  const fs::path d = fresh_dir("synthdet");
  write_text(d / "cfg", kTinyCfg);
  CHECK(run_cli("synth --config " + (d / "cfg").string() + " --out " + (d / "a").string(), d).code ==
        0);
  CHECK(run_cli("synth --config " + (d / "cfg").string() + " --out " + (d / "b").string(), d).code ==
        0);
  CHECK(trees_equal(d / "a", d / "b"));

  // A different seed changes the data.
  CHECK(run_cli("synth --config " + (d / "cfg").string() + " --seed 99 --out " + (d / "c").string(),
                d)
            .code == 0);
  CHECK_FALSE(trees_equal(d / "a", d / "c"));
  fs::remove_all(d);
}

TEST_CASE("single frame synthesis warns that there is nothing to track") {
  const fs::path d = fresh_dir("oneframe");
  write_text(d / "cfg", std::string(kTinyCfg) + "frames = 1\n");
  const RunResult r =
      run_cli("synth --config " + (d / "cfg").string() + " --out " + (d / "o").string(), d);
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("training is byte identical across same-seed single-worker runs") {
  const fs::path d = fresh_dir("traindet");
  write_text(d / "cfg", kTinyCfg);
  REQUIRE(run_cli("synth --config " + (d / "cfg").string() + " --out " + (d / "data").string(), d)
              .code == 0);
  const std::string base = "--workers 1 train --config " + (d / "cfg").string() + " --data " +
                           (d / "data").string();
  REQUIRE(run_cli(base + " --out " + (d / "a.ckpt").string() + " --log " + (d / "a.log").string(),
                  d)
              .code == 0);
  REQUIRE(run_cli(base + " --out " + (d / "b.ckpt").string() + " --log " + (d / "b.log").string(),
                  d)
              .code == 0);
  CHECK(slurp(d / "a.ckpt") == slurp(d / "b.ckpt"));
  CHECK(slurp(d / "a.log") == slurp(d / "b.log"));
  CHECK(slurp(d / "a.log").find("0 ") == 0);  // step indices from zero
  fs::remove_all(d);
}

TEST_CASE("the full synth, train, track, eval loop runs and reports") {
  const fs::path d = fresh_dir("loop");
  write_text(d / "cfg", kTinyCfg);
  REQUIRE(run_cli("synth --config " + (d / "cfg").string() + " --out " + (d / "data").string(), d)
              .code == 0);
  REQUIRE(run_cli("train --config " + (d / "cfg").string() + " --data " + (d / "data").string() +
                      " --out " + (d / "m.ckpt").string() + " --log " + (d / "t.log").string(),
                  d)
              .code == 0);

  const std::string seq = (d / "data" / "seq_001").string();
  RunResult r = run_cli("track --checkpoint " + (d / "m.ckpt").string() + " --sequence " + seq +
                            " --out " + (d / "preds.txt").string() + " --dump-maps " +
                            (d / "maps").string() + " --window",
                        d);
  CHECK(r.code == 0);
  CHECK(fs::exists(d / "preds.txt"));
  CHECK(fs::exists(d / "preds.txt.time"));
  CHECK(fs::exists(d / "maps" / "score_000001.pgm"));

  r = run_cli("eval --results " + (d / "preds.txt").string() + " --sequence " + seq +
                  " --checkpoint " + (d / "m.ckpt").string(),
              d);
  CHECK(r.code == 0);
  CHECK(r.out.find("sr = ") != std::string::npos);
  CHECK(r.out.find("pr = ") != std::string::npos);
  CHECK(r.out.find("npr = ") != std::string::npos);
  CHECK(r.out.find("fps = ") != std::string::npos);
  CHECK(r.out.find("fps = -") == std::string::npos);  // sidecar was auto-probed
  CHECK(r.out.find("params = ") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("evaluating the ground truth against itself scores perfectly") {
  const fs::path d = fresh_dir("evalgt");
  write_text(d / "cfg", kTinyCfg);
  REQUIRE(run_cli("synth --config " + (d / "cfg").string() + " --out " + (d / "data").string(), d)
              .code == 0);
  const std::string gt = (d / "data" / "seq_000" / "gt.txt").string();
  const RunResult r = run_cli("eval --results " + gt + " --gt " + gt, d);
  CHECK(r.code == 0);
  CHECK(r.out.find("sr = 100.000000") != std::string::npos);
  CHECK(r.out.find("pr = 100.000000") != std::string::npos);
  CHECK(r.out.find("npr = 100.000000") != std::string::npos);
  CHECK(r.out.find("fps = -") != std::string::npos);
  CHECK(r.out.find("params = -") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("bench output agrees with in-process parameter counting") {
  const fs::path d = fresh_dir("bench");
  write_text(d / "cfg", kTinyCfg);
  const RunResult r = run_cli("bench --config " + (d / "cfg").string(), d);
  CHECK(r.code == 0);

  RunConfig cfg = parse_config_text(kTinyCfg);
  cfg.validate();
  TrackerModel<float> model(cfg);
  char want[64];
  std::snprintf(want, sizeof want, "params = %lld\n", (long long)model.count_params());
  CHECK(r.out.find(want) != std::string::npos);
  std::snprintf(want, sizeof want, "flops = %lld\n", (long long)estimate_flops(cfg));
  CHECK(r.out.find(want) != std::string::npos);
  CHECK(r.out.find("reference_millions = 7.00") != std::string::npos);

  // Exactly one parameter source.
  CHECK(run_cli("bench", d).code == 1);
  fs::remove_all(d);
}

TEST_CASE("the selftest command passes") {
  const fs::path d = fresh_dir("self");
  const RunResult r = run_cli("selftest", d);
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("all checks passed") != std::string::npos);
  fs::remove_all(d);
}
