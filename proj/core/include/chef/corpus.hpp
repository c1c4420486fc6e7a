#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chef/grammar.hpp"
#include "chef/tensor.hpp"

namespace chef {

struct RecipeRecord {
  std::string id;
  std::string title;
  std::vector<std::string> ingredients;
  std::vector<std::string> instructions;
  std::string image_path;  // relative to the corpus file's directory
};

// The text fed to the model: title, ingredient lines and instructions joined
// with newlines, lowercase.
std::string recipe_model_text(const RecipeRecord& rec);

// One synthetic record: text templates over an ingredient subset plus an
// image carrying the same subset signal.
struct SynthEntry {
  RecipeRecord record;               // image_path empty until written out
  std::vector<std::size_t> subset;   // indices into grammar_ingredients()
  Tensor image;                      // H x W x C in [0,1]
};

// Per-ingredient image patterns, a fixed deterministic family shared by every
// corpus (the seed argument of synth only drives subsets and noise).
const Tensor& ingredient_pattern(std::size_t ingredient, std::size_t h, std::size_t w,
                                 std::size_t c);
Tensor base_image(std::size_t h, std::size_t w, std::size_t c);

// Deterministic generator: same seed, same entries, byte for byte.
std::vector<SynthEntry> synth_entries(std::uint64_t seed, std::size_t n, std::size_t h = 16,
                                      std::size_t w = 16, std::size_t c = 3);

// Full synth_corpus: writes <out_dir>/corpus.jsonl and <out_dir>/images/*.tnsr,
// returns the records. n must be >= 1.
std::vector<RecipeRecord> synth_corpus(std::uint64_t seed, std::size_t n,
                                       const std::string& out_dir, std::size_t h = 16,
                                       std::size_t w = 16, std::size_t c = 3);

void save_corpus(const std::string& jsonl_path, const std::vector<RecipeRecord>& records);

// Parses and validates a JSON-lines corpus. Malformed lines report their line
// number; image files must exist, parse as 3-d tensors and lie in [0,1].
std::vector<RecipeRecord> load_corpus(const std::string& jsonl_path);

// Resolves a record's image path against the corpus file location.
std::string corpus_image_path(const std::string& jsonl_path, const RecipeRecord& rec);

// Deterministic 90/10 split by record index: index % 10 == 9 goes to val.
bool is_validation_index(std::size_t index);

}  // namespace chef
