#pragma once

#include <string>
#include <vector>

#include "chef/backbones.hpp"
#include "chef/tensor.hpp"

namespace chef {

// Metric tokenization: lowercase, punctuation split off as single-character
// tokens, whitespace split. Independent of the model Vocab.
std::vector<std::string> metric_tokenize(const std::string& text);

// Corpus-level BLEU in [0, 100]: clipped n-gram precisions n=1..4 aggregated
// over the corpus, exponential smoothing for zero counts (the z-th zero order
// falls back to 1/(2^z * count)), brevity penalty min(1, exp(1 - ref/hyp)).
double sacrebleu(const std::vector<std::string>& hypotheses,
                 const std::vector<std::string>& references);

struct Rouge2 {
  double precision = 0, recall = 0, f1 = 0;
};

// Clipped bigram overlap; degenerate denominators yield zeros.
Rouge2 rouge2(const std::string& hypothesis, const std::string& reference);

// Cosine similarity of pooled visual embeddings, in [-1, 1].
template <class T>
double clip_similarity(const FrozenVisualEncoderT<T>& venc, const TensorT<T>& image_a,
                       const TensorT<T>& image_b) {
  return cosine(visual_encode(venc, image_a), visual_encode(venc, image_b));
}

}  // namespace chef
