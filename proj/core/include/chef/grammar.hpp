#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace chef {

// Deterministic recipe templates over ingredient subsets. The grammar is the
// closed word universe the Vocab is built from; rendering the same subset
// always yields the same text.

struct RecipeText {
  std::string title;
  std::vector<std::string> ingredients;   // one line per ingredient
  std::vector<std::string> instructions;  // one sentence per entry
};

const std::vector<std::string>& grammar_ingredients();  // the I=20 universe

// Every distinct word any template can emit, sorted and deduplicated.
const std::vector<std::string>& grammar_words();

// subset holds indices into grammar_ingredients(), strictly increasing.
RecipeText render_recipe(const std::vector<std::size_t>& subset);

}  // namespace chef
