// chef: synthesize corpora, train the bridge, evaluate i2t/t2i, and generate
// interleaved recipe text and images from a checkpoint.
//
// Exit codes: 0 success, 1 usage error, 2 runtime/numeric error.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "chef/checkpoint.hpp"
#include "chef/corpus.hpp"
#include "chef/metrics.hpp"
#include "chef/tensor_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct LoadedData {
  std::vector<chef::RecipeRecord> records;
  std::string jsonl_path;

  chef::Tensor image(std::size_t i) const {
    return chef::load_tensor(chef::corpus_image_path(jsonl_path, records[i]));
  }
};

LoadedData load_data(const std::string& data_path) {
  LoadedData out;
  out.jsonl_path = fs::is_directory(data_path)
                       ? (fs::path(data_path) / "corpus.jsonl").string()
                       : data_path;
  out.records = chef::load_corpus(out.jsonl_path);
  return out;
}

void print_report(const std::string& metric, double value, std::size_t n) {
  json j;
  j["metric"] = metric;
  j["value"] = value;
  j["n"] = n;
  std::cout << j.dump() << "\n";
}

int cmd_synth(std::uint64_t seed, std::size_t n, const std::string& out_dir) {
  auto records = chef::synth_corpus(seed, n, out_dir);
  std::cout << records.size() << " records written to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path, const std::string& resume_path) {
  chef::Config cfg = config_path.empty() ? chef::Config{} : chef::load_config_toml(config_path);

  LoadedData data = load_data(data_path);
  if (data.records.empty()) throw chef::DimError("training corpus is empty");

  chef::Backbones backbones;
  chef::BridgeParams params;
  std::vector<chef::AdamState> opt_states;
  std::uint64_t start_step = 0;
  if (!resume_path.empty()) {
    chef::CheckpointBundle bundle = chef::load_checkpoint(resume_path);
    if (!config_path.empty()) {
      // --config may extend the schedule, but the model shape is pinned by
      // the checkpoint.
      const auto& a = cfg.dims;
      const auto& b = bundle.config.dims;
      if (a.e != b.e || a.d != b.d || a.k != b.k || a.m != b.m || a.L != b.L || a.r != b.r ||
          a.H != b.H || a.W != b.W || a.C != b.C || a.max_seq != b.max_seq)
        throw chef::DimError("--config dims disagree with the checkpoint being resumed");
    } else {
      cfg = bundle.config;
    }
    backbones = std::move(bundle.backbones);
    params = std::move(bundle.params);
    opt_states = std::move(bundle.opt_states);
    start_step = bundle.step;
  } else {
    backbones = chef::build_backbones(cfg.training.seed, cfg.dims);
    params = chef::init_bridge(cfg.training.seed, cfg.dims);
  }

  std::vector<chef::TrainItem> items;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    if (chef::is_validation_index(i)) continue;
    items.push_back(chef::make_train_item(backbones, data.records[i], data.image(i)));
  }
  if (items.empty()) throw chef::DimError("no training records after the 90/10 split");

  chef::Trainer trainer(backbones, std::move(params), cfg.optimizer);
  if (!resume_path.empty()) {
    trainer.opt_states_mut() = std::move(opt_states);
    trainer.set_step(start_step);
  }

  while (trainer.step() < cfg.training.steps) {
    auto idx = chef::train_batch_indices(trainer.step(), cfg.training.batch_size, items.size());
    std::vector<chef::TrainItem> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(items[i]);
    const std::uint64_t step_no = trainer.step();
    chef::LossReport rep =
        trainer.train_step(std::span<const chef::TrainItem>(batch.data(), batch.size()));
    json line;
    line["step"] = step_no;
    line["l_r"] = rep.l_r;
    line["l_p"] = rep.l_p;
    line["l_g"] = rep.l_g;
    line["total"] = rep.total;
    std::cerr << line.dump() << "\n";
  }

  chef::save_checkpoint(out_path, cfg, backbones, trainer.params(), trainer.opt_states(),
                        trainer.step());
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

int cmd_eval_i2t(const std::string& ckpt_path, const std::string& data_path,
                 std::size_t max_tokens, bool echo_references) {
  chef::CheckpointBundle bundle = chef::load_checkpoint(ckpt_path);
  LoadedData data = load_data(data_path);

  chef::BridgeStepModel model(bundle.backbones, bundle.params);
  std::vector<std::string> hypotheses, references;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    if (!chef::is_validation_index(i)) continue;
    references.push_back(chef::recipe_model_text(data.records[i]));
    if (echo_references) {
      hypotheses.push_back(references.back());
      continue;
    }
    chef::GenResult res = chef::generate_interleaved(
        model, {chef::GenSegment::of_image(data.image(i))},
        chef::GenOptions{max_tokens, 0.0, 0});
    std::string text;
    for (const auto& seg : res.segments)
      if (seg.kind == chef::SegmentKind::Text) {
        if (!text.empty()) text += " ";
        text += seg.text;
      }
    hypotheses.push_back(text);
  }
  if (hypotheses.empty()) throw chef::DimError("no validation records in corpus");

  print_report("sacrebleu", chef::sacrebleu(hypotheses, references), hypotheses.size());
  double f1 = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i)
    f1 += chef::rouge2(hypotheses[i], references[i]).f1;
  print_report("rouge2_f1", f1 / static_cast<double>(hypotheses.size()), hypotheses.size());
  return 0;
}

int cmd_eval_t2i(const std::string& ckpt_path, const std::string& data_path) {
  chef::CheckpointBundle bundle = chef::load_checkpoint(ckpt_path);
  LoadedData data = load_data(data_path);

  double similarity = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    if (!chef::is_validation_index(i)) continue;
    chef::TokenSequence content =
        bundle.backbones.vocab.tokenize(chef::recipe_model_text(data.records[i]));
    const std::size_t cap = bundle.backbones.lm.max_seq - bundle.backbones.dims.m - 1;
    if (content.size() > cap) content.resize(cap);
    chef::Tensor generated = chef::t2i_generate(bundle.backbones, bundle.params, content);
    similarity += chef::clip_similarity(bundle.backbones.venc, generated, data.image(i));
    ++n;
  }
  if (n == 0) throw chef::DimError("no validation records in corpus");
  print_report("clip_similarity", similarity / static_cast<double>(n), n);
  return 0;
}

int cmd_generate(const std::string& ckpt_path, const std::string& prompt,
                 const std::string& image_path, std::size_t max_tokens, double temperature,
                 std::uint64_t seed, const std::string& out_dir) {
  chef::CheckpointBundle bundle = chef::load_checkpoint(ckpt_path);
  chef::BridgeStepModel model(bundle.backbones, bundle.params);

  std::vector<chef::GenSegment> prompt_segments;
  if (!image_path.empty())
    prompt_segments.push_back(chef::GenSegment::of_image(chef::load_tensor(image_path)));
  if (!prompt.empty()) prompt_segments.push_back(chef::GenSegment::of_text(prompt));

  chef::GenResult res =
      chef::generate_interleaved(model, prompt_segments,
                                 chef::GenOptions{max_tokens, temperature, seed});

  fs::create_directories(out_dir.empty() ? "." : out_dir);
  std::size_t image_index = 0;
  for (const auto& seg : res.segments) {
    if (seg.kind == chef::SegmentKind::Text) {
      std::cout << seg.text << "\n";
    } else {
      std::ostringstream name;
      name << "img_" << std::setw(3) << std::setfill('0') << image_index++ << ".tnsr";
      const std::string path = (fs::path(out_dir.empty() ? "." : out_dir) / name.str()).string();
      chef::save_tensor(path, seg.image);
      std::cout << "[image: " << path << "]\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bridge training and interleaved recipe/image generation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic recipe/image corpus");
  std::uint64_t synth_seed = 7;
  std::size_t synth_n = 512;
  std::string synth_out = "corpus";
  synth->add_option("--seed", synth_seed, "corpus seed");
  synth->add_option("--n", synth_n, "record count")
      ->check([](const std::string& value) -> std::string {
        if (value.empty() || value == "0" || value[0] == '-') return "n must be >= 1";
        return {};
      });
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train the bridge parameters");
  std::string train_config, train_data, train_out = "model.chef", train_resume;
  train->add_option("--config", train_config, "TOML config file");
  train->add_option("--data", train_data, "corpus.jsonl or its directory")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  // eval-i2t
  auto* ei2t = app.add_subcommand("eval-i2t", "image-to-text evaluation (SacreBLEU, ROUGE-2)");
  std::string ei2t_ckpt, ei2t_data;
  std::size_t ei2t_max_tokens = 96;
  bool ei2t_echo = false;
  ei2t->add_option("--ckpt", ei2t_ckpt, "checkpoint path")->required();
  ei2t->add_option("--data", ei2t_data, "corpus path")->required();
  ei2t->add_option("--max-tokens", ei2t_max_tokens, "generation budget per record");
  ei2t->add_flag("--echo-references", ei2t_echo,
                 "score references against themselves (scoring-path check)");

  // eval-t2i
  auto* et2i = app.add_subcommand("eval-t2i", "text-to-image evaluation (CLIP-style similarity)");
  std::string et2i_ckpt, et2i_data;
  et2i->add_option("--ckpt", et2i_ckpt, "checkpoint path")->required();
  et2i->add_option("--data", et2i_data, "corpus path")->required();

  // generate
  auto* gen = app.add_subcommand("generate", "interleaved text/image generation");
  std::string gen_ckpt, gen_prompt, gen_image, gen_out_dir = ".";
  std::size_t gen_max_tokens = 64;
  double gen_temperature = 0.0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--ckpt", gen_ckpt, "checkpoint path")->required();
  gen->add_option("--prompt", gen_prompt, "text prompt");
  gen->add_option("--image", gen_image, "TNSR image prompt");
  gen->add_option("--max-tokens", gen_max_tokens, "free-token budget");
  gen->add_option("--temperature", gen_temperature, "sampling temperature (0 = greedy)");
  gen->add_option("--seed", gen_seed, "sampling seed");
  gen->add_option("--out-dir", gen_out_dir, "directory for generated image tensors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_seed, synth_n, synth_out);
    if (train->parsed()) return cmd_train(train_config, train_data, train_out, train_resume);
    if (ei2t->parsed()) return cmd_eval_i2t(ei2t_ckpt, ei2t_data, ei2t_max_tokens, ei2t_echo);
    if (et2i->parsed()) return cmd_eval_t2i(et2i_ckpt, et2i_data);
    if (gen->parsed())
      return cmd_generate(gen_ckpt, gen_prompt, gen_image, gen_max_tokens, gen_temperature,
                          gen_seed, gen_out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
