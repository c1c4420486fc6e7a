// Acceptance suite. Each numbered criterion prints exactly one PASS/FAIL
// line; the process exits nonzero if any criterion fails. Heavy artifacts
// (the desk-scale corpus and training runs) are produced once through the
// actual CLI binary and shared by the criteria that need them.

#include <chrono>
#include <cstdlib>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chef/checkpoint.hpp"
#include "chef/metrics.hpp"
#include "chef/sha256.hpp"
#include "chef/tensor_io.hpp"
#include "gradcheck.hpp"
#include "stub_lm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace chef;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << detail
            << std::endl;
  if (!pass) ++g_failures;
}

std::string g_bin;
std::string g_work;

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_chef(const std::string& args, const std::string& tag) {
  const std::string out_path = g_work + "/" + tag + ".out";
  const std::string err_path = g_work + "/" + tag + ".err";
  const std::string cmd = g_bin + " " + args + " > " + out_path + " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  RunResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };
  res.out = slurp(out_path);
  res.err = slurp(err_path);
  return res;
}

struct StepLoss {
  double l_r, l_p, l_g;
};

std::vector<StepLoss> parse_log(const std::string& err) {
  std::vector<StepLoss> out;
  std::istringstream lines(err);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] != '{') continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("l_g")) continue;
    out.push_back({j["l_r"].get<double>(), j["l_p"].get<double>(), j["l_g"].get<double>()});
  }
  return out;
}

void write_desk_config(const std::string& path, std::size_t steps) {
  std::ofstream os(path);
  os << "[training]\nsteps = " << steps << "\nbatch_size = 16\nseed = 7\n";
}

void write_tiny_config(const std::string& path, std::size_t steps) {
  std::ofstream os(path);
  os << "[dims]\ne = 8\nd = 4\nk = 2\nm = 2\nL = 2\nr = 4\nmax_seq = 96\n"
     << "[training]\nsteps = " << steps << "\nbatch_size = 4\nseed = 7\n";
}

// ---------------------------------------------------------------------------

void criterion_1_gradient_fidelity() {
  const auto start = std::chrono::steady_clock::now();
  Config cfg = tiny_config();
  BackbonesT<double> bb64 = build_backbones(7, cfg.dims).cast<double>();
  BridgeParamsT<double> p64 = init_bridge(7, cfg.dims).cast<double>();

  auto entries = synth_entries(81, 1);
  Backbones bb32 = backbones_skeleton(cfg.dims);  // only for the vocab
  TokenSequence content = bb32.vocab.tokenize("one cup tomato and rice");
  TensorT<double> v = visual_encode(bb64.venc, entries[0].image.cast<double>());
  TensorT<double> target = text_encode_target(bb64.tenc, content);
  const Vocab& vocab = bb32.vocab;

  std::size_t checked = 0, failures = 0;
  double max_rel = 0;
  std::string first;
  auto accumulate = [&](const gradcheck::Summary& s) {
    checked += s.checked;
    failures += s.failures;
    max_rel = std::max(max_rel, s.max_rel);
    if (first.empty()) first = s.first_failure;
  };
  accumulate(gradcheck::check_loss(
      bb64, p64, [&](Tape<double>& tp, LmGraph<double>& lm, BridgeGraph<double>& bg) {
        return recipe_loss_node(tp, lm, bg, vocab, v, content);
      }));
  accumulate(gradcheck::check_loss(
      bb64, p64, [&](Tape<double>& tp, LmGraph<double>& lm, BridgeGraph<double>& bg) {
        return img_token_loss_node(tp, lm, bg, vocab, content);
      }));
  accumulate(gradcheck::check_loss(
      bb64, p64, [&](Tape<double>& tp, LmGraph<double>& lm, BridgeGraph<double>& bg) {
        return generation_loss_node(tp, lm, bg, vocab, content, target);
      }));

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream detail;
  detail << checked << " coordinates over l_r/l_p/l_g, max rel err " << max_rel << ", "
         << secs << "s";
  if (!first.empty()) detail << ", first failure: " << first;
  report(1, "gradient fidelity", failures == 0 && secs < 60.0, detail.str());
}

void criterion_7_metric_oracles() {
  bool pass = true;
  std::ostringstream detail;

  std::vector<std::string> corpus = {"one cup tomato", "simmer on low heat", "mix and serve"};
  const double identity = sacrebleu(corpus, corpus);
  pass = pass && std::abs(identity - 100.0) <= 1e-9;

  const double bp_case = sacrebleu({"a b c d"}, {"a b c d e"});
  pass = pass && std::abs(bp_case - 77.880) <= 0.01;

  Rouge2 hand = rouge2("a b c", "a b d");
  pass = pass && hand.precision == 0.5 && hand.recall == 0.5 && hand.f1 == 0.5;

  bool duality = true;
  Rng rng(17);
  const std::vector<std::string> pool = {"stir", "mix", "salt", "rice", "beans", "cup", "two"};
  for (int trial = 0; trial < 100; ++trial) {
    auto sentence = [&] {
      std::string s;
      const std::size_t len = rng.below(9);
      for (std::size_t i = 0; i < len; ++i) {
        if (i) s += " ";
        s += pool[rng.below(pool.size())];
      }
      return s;
    };
    const std::string a = sentence(), b = sentence();
    Rouge2 ab = rouge2(a, b);
    Rouge2 ba = rouge2(b, a);
    duality = duality && ab.precision == ba.recall && ab.recall == ba.precision;
  }
  pass = pass && duality;

  detail << "identity=" << identity << " bp_case=" << bp_case << " rouge=(" << hand.precision
         << "," << hand.recall << "," << hand.f1 << ") duality=" << (duality ? "ok" : "broken");
  report(7, "metric oracles", pass, detail.str());
}

void criterion_6_decode_contract() {
  // Randomized stub logits over the desk vocabulary (m = 8); the qformer and
  // image decoder are real tiny-config components.
  Config cfg = tiny_config();
  cfg.dims.m = 8;
  Backbones bb = backbones_skeleton(cfg.dims);
  {
    Rng rng(99);
    bb.idec.w = Tensor::randn(bb.idec.w.shape, rng, 0.05);
    bb.idec.b = Tensor::randn(bb.idec.b.shape, rng, 0.05);
  }
  BridgeParams params = init_bridge(3, cfg.dims);

  std::size_t violations = 0, total_runs = 0, total_images = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    stub::StubStepModel model;
    model.vocab_ptr = &bb.vocab;
    model.params = &params;
    model.idec = &bb.idec;
    model.e_width = cfg.dims.e;
    model.max_context = 128;
    model.hidden_seed = seed;
    model.next_logits_fn = [&, seed](const TokenSequence& ids) {
      Rng r(seed * 6364136223846793005ULL + ids.size());
      Tensor logits = Tensor::zeros({static_cast<std::size_t>(bb.vocab.total_size())});
      for (float& v : logits.data) v = static_cast<float>(r.normal(0.0, 3.0));
      return logits;
    };
    GenResult res = generate_interleaved(model, {GenSegment::of_text("one cup rice")},
                                         GenOptions{24, seed % 3 ? 0.0 : 1.0, seed});

    const std::int32_t m = bb.vocab.num_img();
    std::size_t runs = 0;
    for (std::size_t i = 0; i < res.emitted.size();) {
      if (bb.vocab.is_img(res.emitted[i])) {
        bool ok = res.emitted[i] == bb.vocab.img_id(0) &&
                  i + static_cast<std::size_t>(m) <= res.emitted.size();
        if (ok)
          for (std::int32_t j = 0; j < m; ++j)
            ok = ok && res.emitted[i + static_cast<std::size_t>(j)] == bb.vocab.img_id(j);
        if (!ok) {
          ++violations;
          break;
        }
        i += static_cast<std::size_t>(m);
        ++runs;
      } else {
        ++i;
      }
    }
    std::size_t image_segments = 0;
    for (const auto& seg : res.segments)
      if (seg.kind == SegmentKind::Image) ++image_segments;
    if (image_segments != runs) ++violations;
    total_runs += runs;
    total_images += image_segments;
  }
  std::ostringstream detail;
  detail << "1000 sequences, " << total_runs << " IMG runs, " << total_images
         << " image segments, " << violations << " violations";
  report(6, "decode contract", violations == 0 && total_runs > 0, detail.str());
}

void criterion_9_persistence(const std::string& trained_ckpt) {
  bool pass = true;
  std::ostringstream detail;

  // TNSR round trip
  Rng rng(5);
  Tensor t = Tensor::randn({7, 3, 2}, rng, 1.0);
  const std::string tp1 = g_work + "/rt.tnsr";
  const std::string tp2 = g_work + "/rt2.tnsr";
  save_tensor(tp1, t);
  save_tensor(tp2, load_tensor(tp1));
  const bool tnsr_ok = sha256_file_hex(tp1) == sha256_file_hex(tp2);
  pass = pass && tnsr_ok;

  // checkpoint round trip on the real trained artifact
  CheckpointBundle bundle = load_checkpoint(trained_ckpt);
  const std::string cp2 = g_work + "/rt.chef";
  save_checkpoint(cp2, bundle.config, bundle.backbones, bundle.params, bundle.opt_states,
                  bundle.step);
  const bool ckpt_ok = sha256_file_hex(trained_ckpt) == sha256_file_hex(cp2);
  pass = pass && ckpt_ok;

  // resume equivalence through the CLI (tiny config)
  const std::string corpus = g_work + "/tiny-corpus";
  run_chef("synth --seed 9 --n 40 --out " + corpus, "c9-synth");
  const std::string cfg10 = g_work + "/tiny10.toml";
  const std::string cfg5 = g_work + "/tiny5.toml";
  write_tiny_config(cfg10, 10);
  write_tiny_config(cfg5, 5);

  RunResult full = run_chef(
      "train --config " + cfg10 + " --data " + corpus + " --out " + g_work + "/t10.chef",
      "c9-full");
  RunResult half = run_chef(
      "train --config " + cfg5 + " --data " + corpus + " --out " + g_work + "/t5.chef",
      "c9-half");
  RunResult resumed = run_chef("train --config " + cfg10 + " --data " + corpus + " --resume " +
                                   g_work + "/t5.chef --out " + g_work + "/t10b.chef",
                               "c9-resume");
  bool resume_ok = full.exit_code == 0 && half.exit_code == 0 && resumed.exit_code == 0;
  auto full_losses = parse_log(full.err);
  auto resumed_losses = parse_log(resumed.err);
  resume_ok = resume_ok && full_losses.size() == 10 && resumed_losses.size() == 5;
  double max_delta = 0;
  if (resume_ok) {
    for (std::size_t i = 0; i < 5; ++i) {
      const StepLoss& a = full_losses[5 + i];
      const StepLoss& b = resumed_losses[i];
      max_delta = std::max({max_delta, std::abs(a.l_r - b.l_r), std::abs(a.l_p - b.l_p),
                            std::abs(a.l_g - b.l_g)});
    }
    resume_ok = resume_ok && max_delta <= 1e-6;
  }
  pass = pass && resume_ok;

  detail << "tnsr=" << (tnsr_ok ? "bit-exact" : "MISMATCH")
         << " checkpoint=" << (ckpt_ok ? "bit-exact" : "MISMATCH")
         << " resume max |delta|=" << max_delta;
  report(9, "persistence and resume", pass, detail.str());
}

int fail_early(const std::string& why) {
  std::cout << "FAIL (setup): " << why << std::endl;
  return 1;
}

}  // namespace

int main() {
  const char* bin = std::getenv("CHEF_BIN");
  if (!bin || !*bin) {
    std::cout << "FAIL (setup): CHEF_BIN not set" << std::endl;
    return 1;
  }
  g_bin = bin;
  g_work = (fs::temp_directory_path() / ("chef-acceptance-" + std::to_string(getpid()))).string();
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  // ---- fast, self-contained criteria -------------------------------------
  criterion_1_gradient_fidelity();
  criterion_6_decode_contract();
  criterion_7_metric_oracles();

  // ---- desk-scale pipeline, exercised through the CLI ---------------------
  const std::string corpus_a = g_work + "/corpus-a";
  const std::string corpus_b = g_work + "/corpus-b";
  if (run_chef("synth --seed 7 --n 512 --out " + corpus_a, "synth-a").exit_code != 0)
    return fail_early("synth A failed");
  if (run_chef("synth --seed 7 --n 512 --out " + corpus_b, "synth-b").exit_code != 0)
    return fail_early("synth B failed");

  const std::string desk_cfg = g_work + "/desk.toml";
  const std::string init_cfg = g_work + "/desk0.toml";
  write_desk_config(desk_cfg, 2000);
  write_desk_config(init_cfg, 0);

  if (run_chef("train --config " + init_cfg + " --data " + corpus_a + " --out " + g_work +
                   "/init.chef",
               "train-init")
          .exit_code != 0)
    return fail_early("init (steps=0) training failed");

  const auto train_start = std::chrono::steady_clock::now();
  RunResult train_a = run_chef(
      "train --config " + desk_cfg + " --data " + corpus_a + " --out " + g_work + "/a.chef",
      "train-a");
  const double train_secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - train_start).count();
  if (train_a.exit_code != 0) return fail_early("desk training run A failed");

  RunResult train_b = run_chef(
      "train --config " + desk_cfg + " --data " + corpus_b + " --out " + g_work + "/b.chef",
      "train-b");
  if (train_b.exit_code != 0) return fail_early("desk training run B failed");

  // criterion 2: frozen-ness
  {
    CheckpointBundle before = load_checkpoint(g_work + "/init.chef");
    CheckpointBundle after = load_checkpoint(g_work + "/a.chef");
    const std::string h_before = backbones_sha256(before.backbones);
    const std::string h_after = backbones_sha256(after.backbones);
    report(2, "frozen backbones", h_before == h_after,
           "sha256 " + h_before.substr(0, 16) + "... vs " + h_after.substr(0, 16) + "... across " +
               std::to_string(after.step) + " steps");
  }

  // criterion 3: learning signal on l_g
  {
    auto losses = parse_log(train_a.err);
    bool pass = losses.size() == 2000;
    double first_lg = 0, last_lg = 0;
    if (pass) {
      first_lg = losses.front().l_g;
      last_lg = losses.back().l_g;
      pass = last_lg <= 0.5 * first_lg && train_secs < 600.0;
    }
    std::ostringstream detail;
    detail << "l_g " << first_lg << " -> " << last_lg << " over 2000 steps in " << train_secs
           << "s";
    report(3, "generation loss halves", pass, detail.str());
  }

  // criterion 4: visual grounding on held-out pairs
  {
    CheckpointBundle bundle = load_checkpoint(g_work + "/a.chef");
    auto records = load_corpus(corpus_a + "/corpus.jsonl");
    std::vector<TokenSequence> contents;
    std::vector<Tensor> images;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!is_validation_index(i)) continue;
      TrainItem item = make_train_item(bundle.backbones, records[i],
                                       load_tensor(corpus_image_path(corpus_a + "/corpus.jsonl",
                                                                     records[i])));
      contents.push_back(item.content);
      images.push_back(load_tensor(corpus_image_path(corpus_a + "/corpus.jsonl", records[i])));
    }
    double matched = 0, shuffled = 0;
    for (std::size_t i = 0; i < contents.size(); ++i) {
      matched += recipe_loss(bundle.backbones, images[i], contents[i], bundle.params);
      shuffled += recipe_loss(bundle.backbones, images[(i + 1) % images.size()], contents[i],
                              bundle.params);
    }
    matched /= static_cast<double>(contents.size());
    shuffled /= static_cast<double>(contents.size());
    const bool pass = matched <= 0.95 * shuffled;
    std::ostringstream detail;
    detail << "held-out mean l_r matched=" << matched << " shuffled=" << shuffled << " ("
           << (shuffled > 0 ? 100.0 * (shuffled - matched) / shuffled : 0) << "% lower, need >= 5%)";
    report(4, "visual grounding", pass, detail.str());
  }

  // criterion 5: t2i improvement over the initialized checkpoint
  {
    RunResult init_eval = run_chef(
        "eval-t2i --ckpt " + g_work + "/init.chef --data " + corpus_a, "t2i-init");
    RunResult trained_eval =
        run_chef("eval-t2i --ckpt " + g_work + "/a.chef --data " + corpus_a, "t2i-a");
    bool pass = init_eval.exit_code == 0 && trained_eval.exit_code == 0;
    double before = 0, after = 0;
    if (pass) {
      before = json::parse(init_eval.out)["value"].get<double>();
      after = json::parse(trained_eval.out)["value"].get<double>();
      pass = after > before;
    }
    std::ostringstream detail;
    detail << "mean clip_similarity init=" << before << " trained=" << after;
    report(5, "t2i improvement", pass, detail.str());
  }

  // criterion 8: end-to-end determinism
  {
    auto dir_digest = [](const std::string& dir) {
      std::vector<std::string> files;
      for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path().string());
      std::sort(files.begin(), files.end());
      Sha256 h;
      for (const auto& f : files) {
        h.update(fs::path(f).lexically_relative(dir).string());
        h.update(sha256_file_hex(f));
      }
      return h.hex_digest();
    };
    const bool corpora_same = dir_digest(corpus_a) == dir_digest(corpus_b);
    const bool ckpt_same =
        sha256_file_hex(g_work + "/a.chef") == sha256_file_hex(g_work + "/b.chef");
    RunResult i2t_a = run_chef(
        "eval-i2t --ckpt " + g_work + "/a.chef --data " + corpus_a + " --max-tokens 80",
        "i2t-a");
    RunResult i2t_b = run_chef(
        "eval-i2t --ckpt " + g_work + "/b.chef --data " + corpus_b + " --max-tokens 80",
        "i2t-b");
    RunResult t2i_a = run_chef("eval-t2i --ckpt " + g_work + "/a.chef --data " + corpus_a,
                               "t2i-det-a");
    RunResult t2i_b = run_chef("eval-t2i --ckpt " + g_work + "/b.chef --data " + corpus_b,
                               "t2i-det-b");
    const bool evals_same = i2t_a.exit_code == 0 && i2t_a.out == i2t_b.out &&
                            t2i_a.exit_code == 0 && t2i_a.out == t2i_b.out;
    std::ostringstream detail;
    detail << "corpora " << (corpora_same ? "bit-identical" : "DIFFER") << "; checkpoints "
           << (ckpt_same ? "bit-identical" : "DIFFER") << "; reports "
           << (evals_same ? "identical" : "DIFFER");
    std::string first_line = i2t_a.out.substr(0, i2t_a.out.find('\n'));
    detail << "; i2t A: " << first_line;
    report(8, "end-to-end determinism", corpora_same && ckpt_same && evals_same, detail.str());
  }

  // criterion 9 last (reuses the trained artifact)
  criterion_9_persistence(g_work + "/a.chef");

  if (g_failures == 0) {
    std::cout << "all acceptance criteria passed" << std::endl;
    return 0;
  }
  std::cout << g_failures << " acceptance criteria failed" << std::endl;
  return 1;
}
