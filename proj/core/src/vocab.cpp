#include "chef/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "chef/error.hpp"
#include "chef/grammar.hpp"

namespace chef {

Vocab Vocab::build(std::size_t num_img_tokens) {
  Vocab v;
  v.words_ = {"[PAD]", "[BOS]", "[EOS]"};
  const auto& grammar = grammar_words();
  v.words_.insert(v.words_.end(), grammar.begin(), grammar.end());
  for (std::size_t i = 0; i < v.words_.size(); ++i)
    v.index_.emplace(v.words_[i], static_cast<std::int32_t>(i));
  v.num_img_ = static_cast<std::int32_t>(num_img_tokens);
  for (std::int32_t j = 0; j < v.num_img_; ++j) {
    std::ostringstream os;
    os << "[IMG_" << (j + 1) << "]";
    v.img_names_.push_back(os.str());
  }
  return v;
}

std::int32_t Vocab::lookup(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw VocabError("unknown word: \"" + word + "\"");
  return it->second;
}

const std::string& Vocab::token_name(std::int32_t id) const {
  if (id >= 0 && id < base_size()) return words_[static_cast<std::size_t>(id)];
  if (is_img(id)) return img_names_[static_cast<std::size_t>(id - base_size())];
  throw VocabError("token id " + std::to_string(id) + " out of range [0, " +
                   std::to_string(total_size()) + ")");
}

TokenSequence Vocab::tokenize(const std::string& text) const {
  TokenSequence out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(lookup(word));
      word.clear();
    }
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

std::string Vocab::detokenize(std::span<const std::int32_t> ids) const {
  std::ostringstream os;
  bool first = true;
  for (std::int32_t id : ids) {
    if (is_special(id))
      throw VocabError("detokenize: special token " + token_name(id) + " in word span");
    os << (first ? "" : " ") << token_name(id);
    first = false;
  }
  return os.str();
}

}  // namespace chef
