#include "chef/grammar.hpp"

#include <algorithm>
#include <cstdint>
#include <set>
#include <sstream>

#include "chef/error.hpp"

namespace chef {

namespace {

const std::vector<std::string> kIngredients = {
    "tomato", "onion",   "garlic", "basil",  "pepper", "mushroom", "chicken",
    "beef",   "tofu",    "rice",   "noodles", "cheese", "spinach",  "carrot",
    "potato", "shrimp",  "lemon",  "ginger", "corn",   "beans"};

const std::vector<std::string> kAdjectives = {"spicy",  "creamy", "roasted", "fresh",
                                              "smoky",  "sweet",  "tangy",   "herbed",
                                              "golden", "rustic", "zesty",   "savory"};

const std::vector<std::string> kDishes = {"stew",  "salad",   "soup", "bowl",  "curry",
                                          "bake",  "skillet", "pie",  "ragout", "hash"};

const std::vector<std::string> kQuantities = {"one", "two", "three", "half", "four", "six"};

const std::vector<std::string> kUnits = {"cup",   "spoon", "pound", "slice",
                                         "pinch", "dash",  "bunch", "knob"};

const std::vector<std::string> kVessels = {"pan", "pot", "wok", "dish", "tray", "casserole"};

const std::vector<std::string> kCookVerbs = {"simmer", "roast", "saute", "braise",
                                             "steam",  "sear",  "bake",  "grill"};

const std::vector<std::string> kLevels = {"low", "medium", "high"};

const std::vector<std::string> kDurations = {"five", "ten", "twenty", "thirty", "forty", "sixty"};

const std::vector<std::string> kSpices = {"salt",    "cumin",  "paprika", "thyme",
                                          "oregano", "nutmeg", "fennel",  "saffron"};

const std::vector<std::string> kFinishes = {"garnish", "plate", "toss", "rest",
                                            "fold",    "drain", "whisk", "glaze"};

// Deterministic mixing of the subset into template choices.
std::uint64_t subset_hash(const std::vector<std::size_t>& subset) {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (std::size_t s : subset) {
    h ^= s + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
  }
  return h;
}

std::string join_with_and(const std::vector<std::size_t>& subset) {
  std::ostringstream os;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (i) os << " and ";
    os << kIngredients[subset[i]];
  }
  return os.str();
}

}  // namespace

const std::vector<std::string>& grammar_ingredients() { return kIngredients; }

const std::vector<std::string>& grammar_words() {
  static const std::vector<std::string> words = [] {
    std::set<std::string> all;
    auto add_pool = [&](const std::vector<std::string>& pool) {
      for (const auto& w : pool) all.insert(w);
    };
    add_pool(kIngredients);
    add_pool(kAdjectives);
    add_pool(kDishes);
    add_pool(kQuantities);
    add_pool(kUnits);
    add_pool(kVessels);
    add_pool(kCookVerbs);
    add_pool(kLevels);
    add_pool(kDurations);
    add_pool(kSpices);
    add_pool(kFinishes);
    for (const char* w : {"first", "rinse", "the",  "then",    "chop",    "heat",  "oil",
                          "in",    "a",     "and",  "add",     "on",      "for",   "minutes",
                          "season", "with", "before", "serving", "stir",  "until", "tender",
                          "mix",   "of",    "into", "warm",     "everything", "together"})
      all.insert(w);
    return std::vector<std::string>(all.begin(), all.end());
  }();
  return words;
}

RecipeText render_recipe(const std::vector<std::size_t>& subset) {
  if (subset.size() < 2) throw DimError("render_recipe: subset needs at least 2 ingredients");
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] >= kIngredients.size())
      throw DimError("render_recipe: ingredient index out of range");
    if (i > 0 && subset[i] <= subset[i - 1])
      throw DimError("render_recipe: subset must be strictly increasing");
  }
  const std::uint64_t h = subset_hash(subset);

  RecipeText out;
  {
    std::ostringstream t;
    t << kAdjectives[h % kAdjectives.size()] << " " << kIngredients[subset[0]] << " and "
      << kIngredients[subset[1]] << " " << kDishes[(h >> 8) % kDishes.size()];
    out.title = t.str();
  }
  for (std::size_t i = 0; i < subset.size(); ++i) {
    std::ostringstream line;
    line << kQuantities[(h + i) % kQuantities.size()] << " "
         << kUnits[(h / 7 + i) % kUnits.size()] << " " << kIngredients[subset[i]];
    out.ingredients.push_back(line.str());
  }
  {
    std::ostringstream s;
    s << "first rinse the " << kIngredients[subset[0]] << " then chop the "
      << kIngredients[subset[1]];
    out.instructions.push_back(s.str());
  }
  {
    std::ostringstream s;
    s << "heat the oil in a warm " << kVessels[(h >> 16) % kVessels.size()] << " and add the "
      << join_with_and(subset);
    out.instructions.push_back(s.str());
  }
  {
    std::ostringstream s;
    s << kCookVerbs[(h >> 24) % kCookVerbs.size()] << " on " << kLevels[(h >> 32) % kLevels.size()]
      << " heat for " << kDurations[(h >> 40) % kDurations.size()] << " minutes until tender";
    out.instructions.push_back(s.str());
  }
  {
    std::ostringstream s;
    s << "season with " << kSpices[(h >> 48) % kSpices.size()] << " and "
      << kFinishes[(h >> 56) % kFinishes.size()] << " before serving";
    out.instructions.push_back(s.str());
  }
  return out;
}

}  // namespace chef
