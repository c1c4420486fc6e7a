#include "chef/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "chef/error.hpp"
#include "chef/rng.hpp"
#include "chef/tensor_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace chef {

std::string recipe_model_text(const RecipeRecord& rec) {
  std::ostringstream os;
  os << rec.title;
  for (const auto& line : rec.ingredients) os << "\n" << line;
  for (const auto& line : rec.instructions) os << "\n" << line;
  std::string text = os.str();
  for (char& c : text) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return text;
}

const Tensor& ingredient_pattern(std::size_t ingredient, std::size_t h, std::size_t w,
                                 std::size_t c) {
  // Fixed seed: patterns are a property of the data-generating process, not of
  // any particular corpus, so probe corpora and user corpora share them.
  static std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, Tensor> cache;
  auto key = std::make_tuple(ingredient, h, w, c);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  Rng rng(0x5ca1ab1e00000000ULL ^ (ingredient * 0x9e3779b97f4a7c15ULL) ^ (h << 32) ^ (w << 16) ^
          c);
  Tensor pat = Tensor::zeros({h, w, c});
  // Soft blobs with signed per-channel weights; distinct per ingredient and
  // strong enough to dominate the sigma=0.02 pixel noise after projection.
  const int blobs = 3;
  for (int b = 0; b < blobs; ++b) {
    const double cy = rng.uniform(0.0, static_cast<double>(h));
    const double cx = rng.uniform(0.0, static_cast<double>(w));
    const double radius = rng.uniform(1.4, 2.6);
    std::vector<double> chan(c);
    for (std::size_t ch = 0; ch < c; ++ch) chan[ch] = rng.uniform(-1.0, 1.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = (static_cast<double>(y) - cy) / radius;
        const double dx = (static_cast<double>(x) - cx) / radius;
        const double bump = std::exp(-0.5 * (dy * dy + dx * dx));
        for (std::size_t ch = 0; ch < c; ++ch)
          pat.data[(y * w + x) * c + ch] += static_cast<float>(0.45 * chan[ch] * bump);
      }
  }
  return cache.emplace(key, std::move(pat)).first->second;
}

Tensor base_image(std::size_t h, std::size_t w, std::size_t c) {
  Tensor img = Tensor::zeros({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        img.data[(y * w + x) * c + ch] =
            static_cast<float>(0.35 + 0.15 * static_cast<double>(y) / static_cast<double>(h) +
                               0.02 * static_cast<double>(ch));
  return img;
}

std::vector<SynthEntry> synth_entries(std::uint64_t seed, std::size_t n, std::size_t h,
                                      std::size_t w, std::size_t c) {
  if (n < 1) throw DimError("synth_entries: n must be >= 1");
  const std::size_t universe = grammar_ingredients().size();
  Rng rng(seed);
  std::vector<SynthEntry> out;
  out.reserve(n);
  const Tensor base = base_image(h, w, c);
  for (std::size_t i = 0; i < n; ++i) {
    SynthEntry entry;
    const std::size_t subset_size = 2 + rng.below(4);  // |S| in [2,5]
    std::vector<std::size_t> pool(universe);
    for (std::size_t j = 0; j < universe; ++j) pool[j] = j;
    for (std::size_t j = 0; j < subset_size; ++j) {
      const std::size_t pick = j + rng.below(universe - j);
      std::swap(pool[j], pool[pick]);
    }
    entry.subset.assign(pool.begin(), pool.begin() + static_cast<long>(subset_size));
    std::sort(entry.subset.begin(), entry.subset.end());

    RecipeText text = render_recipe(entry.subset);
    std::ostringstream id;
    id << "r" << std::setw(5) << std::setfill('0') << i;
    entry.record.id = id.str();
    entry.record.title = text.title;
    entry.record.ingredients = text.ingredients;
    entry.record.instructions = text.instructions;

    entry.image = base;
    for (std::size_t s : entry.subset) {
      const Tensor& pat = ingredient_pattern(s, h, w, c);
      for (std::size_t j = 0; j < entry.image.numel(); ++j) entry.image.data[j] += pat.data[j];
    }
    for (std::size_t j = 0; j < entry.image.numel(); ++j) {
      double v = static_cast<double>(entry.image.data[j]) + rng.normal(0.0, 0.02);
      entry.image.data[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::vector<RecipeRecord> synth_corpus(std::uint64_t seed, std::size_t n,
                                       const std::string& out_dir, std::size_t h, std::size_t w,
                                       std::size_t c) {
  std::vector<SynthEntry> entries = synth_entries(seed, n, h, w, c);
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("synth_corpus: cannot create " + out_dir + ": " + ec.message());

  std::vector<RecipeRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    std::ostringstream rel;
    rel << "images/img_" << std::setw(5) << std::setfill('0') << i << ".tnsr";
    entries[i].record.image_path = rel.str();
    save_tensor((fs::path(out_dir) / rel.str()).string(), entries[i].image);
    records.push_back(entries[i].record);
  }
  save_corpus((fs::path(out_dir) / "corpus.jsonl").string(), records);
  return records;
}

void save_corpus(const std::string& jsonl_path, const std::vector<RecipeRecord>& records) {
  std::ofstream os(jsonl_path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_corpus: cannot open " + jsonl_path + " for writing");
  for (const auto& rec : records) {
    json j;
    j["id"] = rec.id;
    j["title"] = rec.title;
    j["ingredients"] = rec.ingredients;
    j["instructions"] = rec.instructions;
    j["image_path"] = rec.image_path;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("save_corpus: write failed for " + jsonl_path);
}

std::vector<RecipeRecord> load_corpus(const std::string& jsonl_path) {
  std::ifstream is(jsonl_path, std::ios::binary);
  if (!is) throw IoError("load_corpus: cannot open " + jsonl_path);
  std::vector<RecipeRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(jsonl_path + ":" + std::to_string(line_no) +
                        ": malformed JSON: " + e.what());
    }
    RecipeRecord rec;
    try {
      rec.id = j.at("id").get<std::string>();
      rec.title = j.at("title").get<std::string>();
      rec.ingredients = j.at("ingredients").get<std::vector<std::string>>();
      rec.instructions = j.at("instructions").get<std::vector<std::string>>();
      rec.image_path = j.at("image_path").get<std::string>();
    } catch (const json::exception& e) {
      throw FormatError(jsonl_path + ":" + std::to_string(line_no) +
                        ": missing or mistyped field: " + e.what());
    }
    if (rec.title.empty())
      throw FormatError(jsonl_path + ":" + std::to_string(line_no) + ": empty title");
    if (rec.instructions.empty())
      throw FormatError(jsonl_path + ":" + std::to_string(line_no) + ": empty instructions");

    const std::string img = corpus_image_path(jsonl_path, rec);
    if (!fs::exists(img))
      throw IoError(jsonl_path + ":" + std::to_string(line_no) + ": missing image file " + img);
    Tensor t = load_tensor(img);
    if (t.ndim() != 3)
      throw FormatError(img + ": expected 3-d image tensor, got " + shape_str(t.shape));
    for (float v : t.data)
      if (!(v >= 0.0f && v <= 1.0f))
        throw FormatError(img + ": pixel value " + std::to_string(v) + " outside [0,1]");
    out.push_back(std::move(rec));
  }
  return out;
}

std::string corpus_image_path(const std::string& jsonl_path, const RecipeRecord& rec) {
  fs::path p(rec.image_path);
  if (p.is_absolute()) return p.string();
  return (fs::path(jsonl_path).parent_path() / p).string();
}

bool is_validation_index(std::size_t index) { return index % 10 == 9; }

}  // namespace chef
