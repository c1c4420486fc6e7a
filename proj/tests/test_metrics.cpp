#include <doctest.h>

#include "chef/metrics.hpp"
#include "chef/corpus.hpp"
#include "chef/rng.hpp"
#include "fixtures.hpp"

using namespace chef;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("metric tokenization splits punctuation") {
  auto toks = metric_tokenize("Mix, then serve-hot!");
  std::vector<std::string> want = {"mix", ",", "then", "serve", "-", "hot", "!"};
  CHECK(toks == want);
}

TEST_CASE("sacrebleu identity corpus scores exactly 100") {
  std::vector<std::string> text = {"one cup tomato", "simmer on low heat for ten minutes",
                                   "spicy tomato and onion stew"};
  CHECK(sacrebleu(text, text) == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("closed-form brevity penalty example") {
  // all clipped precisions 1, BP = exp(1 - 5/4): BLEU = 100 * e^-0.25
  const double got = sacrebleu({"a b c d"}, {"a b c d e"});
  CHECK(got == doctest::Approx(100.0 * std::exp(-0.25)).epsilon(1e-9));
  CHECK(std::abs(got - 77.8800783) < 0.01);
}

TEST_CASE("joint permutation leaves corpus BLEU unchanged") {
  std::vector<std::string> hyp = {"a b c", "simmer the beans", "one cup rice", "mix with salt"};
  std::vector<std::string> ref = {"a b d c", "simmer the beans well", "two cups rice",
                                  "mix with salt and serve"};
  const double base = sacrebleu(hyp, ref);
  std::vector<std::size_t> perm = {2, 0, 3, 1};
  std::vector<std::string> hyp_p, ref_p;
  for (std::size_t i : perm) {
    hyp_p.push_back(hyp[i]);
    ref_p.push_back(ref[i]);
  }
  CHECK(sacrebleu(hyp_p, ref_p) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("empty hypothesis is smoothed, not a crash") {
  CHECK(sacrebleu({""}, {"a b c"}) == 0.0);
  const double v = sacrebleu({"a"}, {"a b c d e f"});
  CHECK(v > 0.0);
  CHECK(v < 100.0);
}

TEST_CASE("sacrebleu validates lengths") {
  CHECK_THROWS_AS(sacrebleu({"a"}, {"a", "b"}), DimError);
}

TEST_CASE("bleu stays within [0, 100] on random word soup") {
  Rng rng(5);
  const std::vector<std::string> pool = {"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 50; ++trial) {
    auto sentence = [&] {
      std::string s;
      const std::size_t len = 1 + rng.below(8);
      for (std::size_t i = 0; i < len; ++i) {
        if (i) s += " ";
        s += pool[rng.below(pool.size())];
      }
      return s;
    };
    std::vector<std::string> hyp = {sentence(), sentence()};
    std::vector<std::string> ref = {sentence(), sentence()};
    const double v = sacrebleu(hyp, ref);
    CHECK(v >= 0.0);
    CHECK(v <= 100.0);
  }
}

TEST_CASE("rouge2 identity and disjoint cases") {
  Rouge2 same = rouge2("one cup tomato", "one cup tomato");
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);

  Rouge2 none = rouge2("a b c", "x y z");
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);

  Rouge2 degenerate = rouge2("single", "word");
  CHECK(degenerate.f1 == 0.0);
}

TEST_CASE("rouge2 hand-counted example") {
  Rouge2 r = rouge2("a b c", "a b d");
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == 0.5);
}

TEST_CASE("rouge2 duality: precision(a,b) == recall(b,a) exactly") {
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
    CHECK(ab.precision == ba.recall);
    CHECK(ab.recall == ba.precision);
  }
}

TEST_CASE("clip_similarity: identical images score 1") {
  const Backbones& bb = fixtures::tiny_backbones();
  auto entries = synth_entries(21, 2);
  CHECK(clip_similarity(bb.venc, entries[0].image, entries[0].image) ==
        doctest::Approx(1.0).epsilon(1e-6));
  const double cross = clip_similarity(bb.venc, entries[0].image, entries[1].image);
  CHECK(cross >= -1.0);
  CHECK(cross <= 1.0);
}

TEST_CASE("cosine is scale invariant at the embedding level") {
  Rng rng(2);
  Tensor u = Tensor::randn({8}, rng, 1.0);
  Tensor cu = u;
  for (float& v : cu.data) v *= 3.5f;
  CHECK(cosine(u, cu) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("images sharing ingredients are closer than disjoint pairs on average") {
  const Backbones& bb = fixtures::tiny_backbones();
  Rng rng(33);
  const std::size_t universe = grammar_ingredients().size();
  double shared_sum = 0, disjoint_sum = 0;
  const int pairs = 100;

  auto make_image = [&](const std::vector<std::size_t>& subset, Rng& noise) {
    Tensor img = base_image(16, 16, 3);
    for (std::size_t s : subset) {
      const Tensor& pat = ingredient_pattern(s, 16, 16, 3);
      for (std::size_t i = 0; i < img.numel(); ++i) img.data[i] += pat.data[i];
    }
    for (std::size_t i = 0; i < img.numel(); ++i)
      img.data[i] = static_cast<float>(
          std::clamp(static_cast<double>(img.data[i]) + noise.normal(0, 0.02), 0.0, 1.0));
    return img;
  };

  for (int p = 0; p < pairs; ++p) {
    // same three ingredients vs disjoint triples
    std::vector<std::size_t> pool(universe);
    for (std::size_t i = 0; i < universe; ++i) pool[i] = i;
    for (std::size_t i = 0; i < 6; ++i) std::swap(pool[i], pool[i + rng.below(universe - i)]);
    std::vector<std::size_t> sa(pool.begin(), pool.begin() + 3);
    std::vector<std::size_t> sb(pool.begin() + 3, pool.begin() + 6);
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());

    shared_sum += clip_similarity(bb.venc, make_image(sa, rng), make_image(sa, rng));
    disjoint_sum += clip_similarity(bb.venc, make_image(sa, rng), make_image(sb, rng));
  }
  MESSAGE("shared=", shared_sum / pairs, " disjoint=", disjoint_sum / pairs);
  CHECK(shared_sum / pairs > disjoint_sum / pairs);
}

TEST_SUITE_END();
