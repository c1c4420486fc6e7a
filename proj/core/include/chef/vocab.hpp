#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace chef {

using TokenSequence = std::vector<std::int32_t>;

// Word-level vocabulary over the synthetic grammar. Ids are dense in
// [0, base_size + num_img): specials first, grammar words next, the m
// trainable [IMG_j] ids last (contiguous, ordered).
class Vocab {
 public:
  static Vocab build(std::size_t num_img_tokens);

  std::int32_t pad_id() const { return 0; }
  std::int32_t bos_id() const { return 1; }
  std::int32_t eos_id() const { return 2; }

  // V: word ids plus the three specials; [IMG_j] ids start here.
  std::int32_t base_size() const { return static_cast<std::int32_t>(words_.size()); }
  std::int32_t num_img() const { return num_img_; }
  std::int32_t total_size() const { return base_size() + num_img_; }

  // j in [0, m): id of [IMG_{j+1}].
  std::int32_t img_id(std::int32_t j) const { return base_size() + j; }
  bool is_img(std::int32_t id) const { return id >= base_size() && id < total_size(); }
  bool is_special(std::int32_t id) const { return id < 3 || is_img(id); }

  // Throws VocabError naming the word if it is not in the vocabulary.
  std::int32_t lookup(const std::string& word) const;

  const std::string& token_name(std::int32_t id) const;

  // Lowercases and whitespace-splits; every word must be known.
  TokenSequence tokenize(const std::string& text) const;

  // Joins word tokens with single spaces; rejects special ids.
  std::string detokenize(std::span<const std::int32_t> ids) const;

 private:
  std::vector<std::string> words_;  // id -> token string, specials included
  std::unordered_map<std::string, std::int32_t> index_;
  std::vector<std::string> img_names_;
  std::int32_t num_img_ = 0;
};

}  // namespace chef
