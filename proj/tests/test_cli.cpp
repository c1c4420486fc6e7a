#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "chef/checkpoint.hpp"
#include "chef/sha256.hpp"
#include "fixtures.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

TEST_SUITE_BEGIN("cli");

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_chef(const std::string& args, const std::string& tag) {
  const std::string bin = fixtures::chef_binary();
  REQUIRE_MESSAGE(!bin.empty(), "CHEF_BIN must point at the chef binary");
  const std::string dir = fixtures::scratch_dir("cli-io-" + tag);
  const std::string cmd = bin + " " + args + " > " + dir + "/out.txt 2> " + dir + "/err.txt";
  const int status = std::system(cmd.c_str());
  RunResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };
  res.out = slurp(dir + "/out.txt");
  res.err = slurp(dir + "/err.txt");
  return res;
}

std::string dir_digest(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  chef::Sha256 h;
  for (const auto& f : files) {
    h.update(fs::path(f).lexically_relative(dir).string());
    h.update(chef::sha256_file_hex(f));
  }
  return h.hex_digest();
}

// One shared tiny CLI training run; reused by several cases below.
struct CliWorld {
  std::string dir;
  std::string corpus;
  std::string config;
  std::string ckpt;
};

const CliWorld& cli_world() {
  static const CliWorld world = [] {
    CliWorld w;
    w.dir = fixtures::scratch_dir("cli-world");
    w.corpus = w.dir + "/corpus";
    w.config = w.dir + "/tiny.toml";
    w.ckpt = w.dir + "/tiny.chef";
    {
      std::ofstream os(w.config);
      os << "[dims]\ne = 8\nd = 4\nk = 2\nm = 2\nL = 2\nr = 4\nmax_seq = 96\n"
         << "[training]\nsteps = 12\nbatch_size = 4\nseed = 7\n";
    }
    RunResult synth = run_chef("synth --seed 7 --n 30 --out " + w.corpus, "world-synth");
    REQUIRE(synth.exit_code == 0);
    RunResult train = run_chef(
        "train --config " + w.config + " --data " + w.corpus + " --out " + w.ckpt, "world-train");
    REQUIRE(train.exit_code == 0);
    return w;
  }();
  return world;
}

}  // namespace

TEST_CASE("synth rejects n = 0 with a usage error") {
  RunResult res = run_chef("synth --n 0 --out /tmp/unused-synth", "n0");
  CHECK(res.exit_code == 1);
  CHECK(res.err.find("n must be >= 1") != std::string::npos);
}

TEST_CASE("synth is deterministic per seed") {
  const std::string a = fixtures::scratch_dir("cli-synth-a");
  const std::string b = fixtures::scratch_dir("cli-synth-b");
  CHECK(run_chef("synth --seed 11 --n 16 --out " + a, "det-a").exit_code == 0);
  CHECK(run_chef("synth --seed 11 --n 16 --out " + b, "det-b").exit_code == 0);
  CHECK(dir_digest(a) == dir_digest(b));
}

TEST_CASE("training logs one JSON line per step and writes a loadable checkpoint") {
  const CliWorld& w = cli_world();
  // 12 steps were logged during world construction; retrain 3 more via resume
  chef::CheckpointBundle bundle = chef::load_checkpoint(w.ckpt);
  CHECK(bundle.step == 12);
  CHECK(bundle.config.dims.e == 8);
}

TEST_CASE("steps=0 still produces a valid checkpoint of initialized params") {
  const CliWorld& w = cli_world();
  const std::string cfg0 = w.dir + "/zero.toml";
  {
    std::ofstream os(cfg0);
    os << "[dims]\ne = 8\nd = 4\nk = 2\nm = 2\nL = 2\nr = 4\nmax_seq = 96\n"
       << "[training]\nsteps = 0\nbatch_size = 4\nseed = 7\n";
  }
  const std::string out = w.dir + "/zero.chef";
  RunResult res =
      run_chef("train --config " + cfg0 + " --data " + w.corpus + " --out " + out, "steps0");
  CHECK(res.exit_code == 0);
  CHECK(res.err.empty());  // no step lines
  chef::CheckpointBundle bundle = chef::load_checkpoint(out);
  CHECK(bundle.step == 0);
}

TEST_CASE("train log lines carry exactly the step/loss schema") {
  const CliWorld& w = cli_world();
  const std::string out = w.dir + "/log3.chef";
  RunResult res = run_chef("train --config " + w.config + " --data " + w.corpus + " --out " + out,
                           "logline");
  REQUIRE(res.exit_code == 0);
  std::istringstream lines(res.err);
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    CHECK(j.contains("step"));
    CHECK(j.contains("l_r"));
    CHECK(j.contains("l_p"));
    CHECK(j.contains("l_g"));
    CHECK(j.contains("total"));
    CHECK(j["l_r"].get<double>() >= 0.0);
    ++count;
  }
  CHECK(count == 12);
}

TEST_CASE("eval reports use exactly the {metric, value, n} schema") {
  const CliWorld& w = cli_world();
  RunResult res =
      run_chef("eval-t2i --ckpt " + w.ckpt + " --data " + w.corpus, "t2i-schema");
  REQUIRE(res.exit_code == 0);
  json j = json::parse(res.out);
  CHECK(j.size() == 3);
  CHECK(j.contains("metric"));
  CHECK(j.contains("value"));
  CHECK(j.contains("n"));
  CHECK(j["metric"] == "clip_similarity");
  CHECK(j["n"].get<int>() == 3);
}

TEST_CASE("echo-references is the BLEU-100 scoring-path hook") {
  const CliWorld& w = cli_world();
  RunResult res = run_chef(
      "eval-i2t --ckpt " + w.ckpt + " --data " + w.corpus + " --echo-references", "echo");
  REQUIRE(res.exit_code == 0);
  std::istringstream lines(res.out);
  std::string line;
  REQUIRE(std::getline(lines, line));
  json bleu = json::parse(line);
  CHECK(bleu["metric"] == "sacrebleu");
  CHECK(bleu["value"].get<double>() == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("greedy generation is identical across runs; temperature honors the seed") {
  const CliWorld& w = cli_world();
  const std::string g1 = w.dir + "/gen1";
  const std::string g2 = w.dir + "/gen2";
  RunResult a = run_chef("generate --ckpt " + w.ckpt +
                             " --prompt \"one cup tomato\" --max-tokens 16 --out-dir " + g1,
                         "gen-a");
  RunResult b = run_chef("generate --ckpt " + w.ckpt +
                             " --prompt \"one cup tomato\" --max-tokens 16 --out-dir " + g2,
                         "gen-b");
  CHECK(a.exit_code == 0);
  CHECK(a.out == b.out);

  RunResult t1 = run_chef("generate --ckpt " + w.ckpt +
                              " --prompt \"one cup tomato\" --max-tokens 16 --temperature 0.8 "
                              "--seed 3 --out-dir " + g1,
                          "gen-t1");
  RunResult t2 = run_chef("generate --ckpt " + w.ckpt +
                              " --prompt \"one cup tomato\" --max-tokens 16 --temperature 0.8 "
                              "--seed 3 --out-dir " + g2,
                          "gen-t2");
  CHECK(t1.exit_code == 0);
  CHECK(t1.out == t2.out);
}

TEST_CASE("generate rejects unknown vocabulary words with exit 2") {
  const CliWorld& w = cli_world();
  RunResult res = run_chef(
      "generate --ckpt " + w.ckpt + " --prompt \"one cup zucchini\" --max-tokens 8", "unk");
  CHECK(res.exit_code == 2);
  CHECK(res.err.find("zucchini") != std::string::npos);
}

TEST_CASE("missing checkpoint is a runtime error with exit 2") {
  RunResult res = run_chef("eval-t2i --ckpt /nonexistent.chef --data /also-nonexistent", "miss");
  CHECK(res.exit_code == 2);
}

TEST_CASE("usage errors exit with 1") {
  RunResult res = run_chef("train", "usage");
  CHECK(res.exit_code == 1);
  RunResult res2 = run_chef("frobnicate", "usage2");
  CHECK(res2.exit_code == 1);
}

TEST_SUITE_END();
