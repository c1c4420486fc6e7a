#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "chef/backbones.hpp"

namespace chef {

// ---------------------------------------------------------------------------
// Trainable parameters: the only tensors that receive gradients.
// ---------------------------------------------------------------------------

constexpr std::size_t kQFormerLayers = 4;

template <class T>
struct QDecLayerT {
  TensorT<T> ln1_g, ln1_b, sq, sbq, sk, sbk, sv, sbv, so, sbo;  // self-attention
  TensorT<T> lnx_g, lnx_b, xq, xbq, xk, xbk, xv, xbv, xo, xbo;  // cross-attention
  TensorT<T> ln2_g, ln2_b, w1, b1, w2, b2;                      // mlp
};

// f_w: encoder over the m projected [IMG] hidden states, decoder over the L
// learned queries with cross-attention into the encoder output.
template <class T>
struct QFormerT {
  TensorT<T> in_w, in_b;  // e -> r input projection
  std::vector<LmLayerT<T>> enc;
  TensorT<T> enc_lnf_g, enc_lnf_b;
  std::vector<QDecLayerT<T>> dec;
  TensorT<T> lnf_g, lnf_b;
  TensorT<T> out_w, out_b;  // r -> r output projection
};

template <class T>
struct BridgeParamsT {
  std::size_t k = 0;      // visual prefix length
  TensorT<T> w_recipe;    // d x (k*e)
  TensorT<T> e_img;       // m x e
  QFormerT<T> qf;
  TensorT<T> queries;     // L x r

  template <class U>
  BridgeParamsT<U> cast() const {
    BridgeParamsT<U> out;
    out.k = k;
    out.qf.enc.resize(qf.enc.size());
    out.qf.dec.resize(qf.dec.size());
    const_cast<BridgeParamsT<T>&>(*this).for_each_param_with(
        out, [](const std::string&, TensorT<T>& src, TensorT<U>& dst) {
          dst = src.template cast<U>();
        });
    return out;
  }

  template <class Fn>
  void for_each_param(Fn&& fn) {
    QFormerT<T>& f = qf;
    fn("w_recipe", w_recipe);
    fn("e_img", e_img);
    fn("qf/in_w", f.in_w);
    fn("qf/in_b", f.in_b);
    for (std::size_t i = 0; i < f.enc.size(); ++i) {
      auto& l = f.enc[i];
      const std::string p = "qf/enc" + std::to_string(i) + "/";
      fn(p + "ln1_g", l.ln1_g);
      fn(p + "ln1_b", l.ln1_b);
      fn(p + "wq", l.wq);
      fn(p + "bq", l.bq);
      fn(p + "wk", l.wk);
      fn(p + "bk", l.bk);
      fn(p + "wv", l.wv);
      fn(p + "bv", l.bv);
      fn(p + "wo", l.wo);
      fn(p + "bo", l.bo);
      fn(p + "ln2_g", l.ln2_g);
      fn(p + "ln2_b", l.ln2_b);
      fn(p + "w1", l.w1);
      fn(p + "b1", l.b1);
      fn(p + "w2", l.w2);
      fn(p + "b2", l.b2);
    }
    fn("qf/enc_lnf_g", f.enc_lnf_g);
    fn("qf/enc_lnf_b", f.enc_lnf_b);
    for (std::size_t i = 0; i < f.dec.size(); ++i) {
      auto& l = f.dec[i];
      const std::string p = "qf/dec" + std::to_string(i) + "/";
      fn(p + "ln1_g", l.ln1_g);
      fn(p + "ln1_b", l.ln1_b);
      fn(p + "sq", l.sq);
      fn(p + "sbq", l.sbq);
      fn(p + "sk", l.sk);
      fn(p + "sbk", l.sbk);
      fn(p + "sv", l.sv);
      fn(p + "sbv", l.sbv);
      fn(p + "so", l.so);
      fn(p + "sbo", l.sbo);
      fn(p + "lnx_g", l.lnx_g);
      fn(p + "lnx_b", l.lnx_b);
      fn(p + "xq", l.xq);
      fn(p + "xbq", l.xbq);
      fn(p + "xk", l.xk);
      fn(p + "xbk", l.xbk);
      fn(p + "xv", l.xv);
      fn(p + "xbv", l.xbv);
      fn(p + "xo", l.xo);
      fn(p + "xbo", l.xbo);
      fn(p + "ln2_g", l.ln2_g);
      fn(p + "ln2_b", l.ln2_b);
      fn(p + "w1", l.w1);
      fn(p + "b1", l.b1);
      fn(p + "w2", l.w2);
      fn(p + "b2", l.b2);
    }
    fn("qf/lnf_g", f.lnf_g);
    fn("qf/lnf_b", f.lnf_b);
    fn("qf/out_w", f.out_w);
    fn("qf/out_b", f.out_b);
    fn("queries", queries);
  }

  template <class Fn>
  void for_each_param(Fn&& fn) const {
    const_cast<BridgeParamsT*>(this)->for_each_param(
        [&](const std::string& name, TensorT<T>& t) { fn(name, const_cast<const TensorT<T>&>(t)); });
  }

  // Pairs up tensors of two structurally identical parameter sets.
  template <class U, class Fn>
  void for_each_param_with(BridgeParamsT<U>& other, Fn&& fn) {
    std::vector<std::pair<std::string, TensorT<T>*>> mine;
    for_each_param([&](const std::string& n, TensorT<T>& t) { mine.emplace_back(n, &t); });
    std::size_t i = 0;
    other.for_each_param([&](const std::string& n, TensorT<U>& t) {
      if (i >= mine.size() || mine[i].first != n)
        throw DimError("bridge params: structure mismatch at " + n);
      fn(n, *mine[i].second, t);
      ++i;
    });
  }
};

using BridgeParams = BridgeParamsT<float>;

template <class T>
std::size_t bridge_param_count(const BridgeParamsT<T>& p) {
  std::size_t n = 0;
  p.for_each_param([&](const std::string&, const TensorT<T>& t) { n += t.numel(); });
  return n;
}

BridgeParams init_bridge(std::uint64_t seed, const DimsConfig& dims);

// ---------------------------------------------------------------------------
// Bridge parameters registered on a tape
// ---------------------------------------------------------------------------

template <class T>
struct BridgeGraph {
  Tape<T>* tp;
  std::size_t k, e_width;
  Var<T> w_recipe, e_img, queries;
  struct DecVars {
    Var<T> ln1_g, ln1_b, sq, sbq, sk, sbk, sv, sbv, so, sbo;
    Var<T> lnx_g, lnx_b, xq, xbq, xk, xbk, xv, xbv, xo, xbo;
    Var<T> ln2_g, ln2_b, w1, b1, w2, b2;
  };
  Var<T> in_w, in_b, enc_lnf_g, enc_lnf_b, lnf_g, lnf_b, out_w, out_b;
  std::vector<typename LmGraph<T>::LayerVars> enc;
  std::vector<DecVars> dec;
  std::vector<std::pair<std::string, Var<T>>> named;  // for_each_param order

  BridgeGraph(Tape<T>& tape, const BridgeParamsT<T>& params, bool trainable) : tp(&tape) {
    k = params.k;
    e_width = params.e_img.cols();
    std::vector<Var<T>> vars;
    const_cast<BridgeParamsT<T>&>(params).for_each_param(
        [&](const std::string& name, TensorT<T>& t) {
          Var<T> v = trainable ? tape.param(t) : tape.constant(t);
          named.emplace_back(name, v);
          vars.push_back(v);
        });
    std::size_t i = 0;
    auto next = [&] { return vars[i++]; };
    w_recipe = next();
    e_img = next();
    in_w = next();
    in_b = next();
    enc.resize(params.qf.enc.size());
    for (auto& l : enc) {
      l.ln1_g = next();
      l.ln1_b = next();
      l.wq = next();
      l.bq = next();
      l.wk = next();
      l.bk = next();
      l.wv = next();
      l.bv = next();
      l.wo = next();
      l.bo = next();
      l.ln2_g = next();
      l.ln2_b = next();
      l.w1 = next();
      l.b1 = next();
      l.w2 = next();
      l.b2 = next();
    }
    enc_lnf_g = next();
    enc_lnf_b = next();
    dec.resize(params.qf.dec.size());
    for (auto& l : dec) {
      l.ln1_g = next();
      l.ln1_b = next();
      l.sq = next();
      l.sbq = next();
      l.sk = next();
      l.sbk = next();
      l.sv = next();
      l.sbv = next();
      l.so = next();
      l.sbo = next();
      l.lnx_g = next();
      l.lnx_b = next();
      l.xq = next();
      l.xbq = next();
      l.xk = next();
      l.xbk = next();
      l.xv = next();
      l.xbv = next();
      l.xo = next();
      l.xbo = next();
      l.ln2_g = next();
      l.ln2_b = next();
      l.w1 = next();
      l.b1 = next();
      l.w2 = next();
      l.b2 = next();
    }
    lnf_g = next();
    lnf_b = next();
    out_w = next();
    out_b = next();
    queries = next();
  }

  // reshape(v^T W_recipe, k x e) for a fixed image embedding v.
  Var<T> image_prefix_node(const TensorT<T>& v) {
    const TensorT<T>& w = tp->value(w_recipe);
    if (v.numel() != w.rows())
      throw DimError("image_prefix: embedding dim " + std::to_string(v.numel()) +
                     " vs d=" + std::to_string(w.rows()) + " (k=" + std::to_string(k) +
                     ", e=" + std::to_string(e_width) + ")");
    TensorT<T> row;
    row.shape = {1, v.numel()};
    row.data = v.data;
    Var<T> flat = tp->matmul(tp->constant(std::move(row)), w_recipe);  // 1 x k*e
    return tp->reshape(flat, {k, e_width});
  }

  // f_w: img_hidden [m x e] with the L learned queries -> [L x r].
  Var<T> qformer_node(Var<T> img_hidden) {
    const TensorT<T>& ih = tp->value(img_hidden);
    const std::size_t m_rows = tp->value(e_img).rows();
    if (ih.ndim() != 2 || ih.rows() != m_rows || ih.cols() != e_width)
      throw DimError("qformer: expected [" + std::to_string(m_rows) + "x" +
                     std::to_string(e_width) + "] hidden states, got " + shape_str(ih.shape));
    const T eps = static_cast<T>(kLnEps);
    Var<T> x = tp->add_rowvec(tp->matmul(img_hidden, in_w), in_b);
    for (const auto& l : enc) {
      Var<T> ln = tp->layer_norm(x, l.ln1_g, l.ln1_b, eps);
      x = tp->add(x, attention_block(*tp, ln, ln, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo,
                                     l.bo, kAttnHeads, nullptr));
      x = tp->add(x, mlp_block(*tp, tp->layer_norm(x, l.ln2_g, l.ln2_b, eps), l.w1, l.b1, l.w2,
                               l.b2));
    }
    Var<T> memory = tp->layer_norm(x, enc_lnf_g, enc_lnf_b, eps);

    Var<T> y = queries;
    for (const auto& l : dec) {
      Var<T> ln = tp->layer_norm(y, l.ln1_g, l.ln1_b, eps);
      y = tp->add(y, attention_block(*tp, ln, ln, l.sq, l.sbq, l.sk, l.sbk, l.sv, l.sbv, l.so,
                                     l.sbo, kAttnHeads, nullptr));
      Var<T> lnx = tp->layer_norm(y, l.lnx_g, l.lnx_b, eps);
      y = tp->add(y, attention_block(*tp, lnx, memory, l.xq, l.xbq, l.xk, l.xbk, l.xv, l.xbv,
                                     l.xo, l.xbo, kAttnHeads, nullptr));
      y = tp->add(y, mlp_block(*tp, tp->layer_norm(y, l.ln2_g, l.ln2_b, eps), l.w1, l.b1, l.w2,
                               l.b2));
    }
    y = tp->layer_norm(y, lnf_g, lnf_b, eps);
    return tp->add_rowvec(tp->matmul(y, out_w), out_b);
  }
};

// ---------------------------------------------------------------------------
// Loss graphs. `content` is the plain-word token sequence of the recipe;
// [BOS]/[EOS]/[IMG] framing is applied here.
// ---------------------------------------------------------------------------

inline void require_plain_words(const Vocab& vocab, const TokenSequence& content,
                                const char* op) {
  if (content.empty()) throw DimError(std::string(op) + ": empty token sequence");
  for (std::int32_t id : content) {
    if (id < 0 || id >= vocab.total_size())
      throw VocabError(std::string(op) + ": token id " + std::to_string(id) + " out of range");
    if (vocab.is_img(id))
      throw VocabError(std::string(op) + ": training text must be [IMG]-free, found " +
                       vocab.token_name(id));
    if (vocab.is_special(id))
      throw VocabError(std::string(op) + ": unexpected special token " + vocab.token_name(id));
  }
}

// l_r: NLL of [t_1..t_N, EOS] conditioned on the k-vector visual prefix.
// Losses are charged to recipe positions only, never to the prefix.
template <class T, class Lm>
Var<T> recipe_loss_node(Tape<T>& tp, Lm& lm, BridgeGraph<T>& bg, const Vocab& vocab,
                        const TensorT<T>& image_embedding, const TokenSequence& content) {
  require_plain_words(vocab, content, "recipe_loss");
  Var<T> prefix = bg.image_prefix_node(image_embedding);
  TokenSequence toks;
  toks.reserve(content.size() + 2);
  toks.push_back(vocab.bos_id());
  toks.insert(toks.end(), content.begin(), content.end());
  toks.push_back(vocab.eos_id());
  Var<T> seq = tp.concat_rows(prefix, lm.tokens_embed(toks, bg.e_img));
  Var<T> hidden = lm.hidden_from_embeds(seq);
  // rows k..k+N-1 predict t_1..t_N (t_N = EOS)
  const std::size_t n_pred = content.size() + 1;
  std::vector<std::size_t> rows(n_pred);
  std::iota(rows.begin(), rows.end(), bg.k);
  Var<T> logits = lm.logits_from_hidden(tp.gather_rows(hidden, rows), bg.e_img);
  TokenSequence targets(toks.begin() + 1, toks.end());
  return tp.nll_sum(logits, targets);
}

// l_p: -log p([IMG_1] | t_1..t_N); EOS is excluded from the conditioning.
template <class T, class Lm>
Var<T> img_token_loss_node(Tape<T>& tp, Lm& lm, BridgeGraph<T>& bg, const Vocab& vocab,
                           const TokenSequence& content) {
  require_plain_words(vocab, content, "img_token_loss");
  TokenSequence toks;
  toks.reserve(content.size() + 1);
  toks.push_back(vocab.bos_id());
  toks.insert(toks.end(), content.begin(), content.end());
  Var<T> hidden = lm.hidden_from_embeds(lm.tokens_embed(toks, bg.e_img));
  Var<T> last = tp.gather_rows(hidden, {content.size()});
  Var<T> logits = lm.logits_from_hidden(last, bg.e_img);
  return tp.nll_sum(logits, {vocab.img_id(0)});
}

// Shared forward for l_p and l_g over [BOS, t_1..t_N, IMG_1..IMG_m]. By
// causality the l_p read-out at position N is identical to the standalone
// graph above.
template <class T>
struct PgNodes {
  Var<T> l_p, l_g;
};

template <class T, class Lm>
Var<T> img_run_hidden_node(Tape<T>& tp, Lm& lm, BridgeGraph<T>& bg, const Vocab& vocab,
                           const TokenSequence& content, Var<T>* hidden_out = nullptr) {
  require_plain_words(vocab, content, "generation_loss");
  const std::size_t m = static_cast<std::size_t>(vocab.num_img());
  TokenSequence toks;
  toks.reserve(content.size() + 1 + m);
  toks.push_back(vocab.bos_id());
  toks.insert(toks.end(), content.begin(), content.end());
  for (std::size_t j = 0; j < m; ++j) toks.push_back(vocab.img_id(static_cast<std::int32_t>(j)));
  Var<T> hidden = lm.hidden_from_embeds(lm.tokens_embed(toks, bg.e_img));
  if (hidden_out) *hidden_out = hidden;
  std::vector<std::size_t> img_rows(m);
  std::iota(img_rows.begin(), img_rows.end(), content.size() + 1);
  return tp.gather_rows(hidden, img_rows);
}

template <class T, class Lm>
Var<T> generation_loss_node(Tape<T>& tp, Lm& lm, BridgeGraph<T>& bg, const Vocab& vocab,
                            const TokenSequence& content, const TensorT<T>& target) {
  Var<T> img_hidden = img_run_hidden_node(tp, lm, bg, vocab, content);
  return tp.mse_mean(bg.qformer_node(img_hidden), target);
}

template <class T, class Lm>
PgNodes<T> img_and_gen_loss_nodes(Tape<T>& tp, Lm& lm, BridgeGraph<T>& bg, const Vocab& vocab,
                                  const TokenSequence& content, const TensorT<T>& target) {
  Var<T> hidden{};
  Var<T> img_hidden = img_run_hidden_node(tp, lm, bg, vocab, content, &hidden);
  Var<T> last = tp.gather_rows(hidden, {content.size()});
  Var<T> logits = lm.logits_from_hidden(last, bg.e_img);
  PgNodes<T> out;
  out.l_p = tp.nll_sum(logits, {vocab.img_id(0)});
  out.l_g = tp.mse_mean(bg.qformer_node(img_hidden), target);
  return out;
}

// ---------------------------------------------------------------------------
// Value-level ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> image_prefix(const BridgeParamsT<T>& params, const TensorT<T>& v) {
  Tape<T> tp;
  BridgeGraph<T> bg(tp, params, false);
  return tp.value(bg.image_prefix_node(v));
}

template <class T>
TensorT<T> qformer_forward(const BridgeParamsT<T>& params, const TensorT<T>& img_hidden) {
  Tape<T> tp;
  BridgeGraph<T> bg(tp, params, false);
  return tp.value(bg.qformer_node(tp.constant(img_hidden)));
}

template <class T>
T recipe_loss(const BackbonesT<T>& bb, const TensorT<T>& image, const TokenSequence& content,
              const BridgeParamsT<T>& params) {
  Tape<T> tp;
  LmGraph<T> lm(tp, bb.lm, false);
  BridgeGraph<T> bg(tp, params, false);
  TensorT<T> v = visual_encode(bb.venc, image);
  return tp.value(recipe_loss_node(tp, lm, bg, bb.vocab, v, content)).data[0];
}

template <class T>
T img_token_loss(const BackbonesT<T>& bb, const TokenSequence& content,
                 const BridgeParamsT<T>& params) {
  Tape<T> tp;
  LmGraph<T> lm(tp, bb.lm, false);
  BridgeGraph<T> bg(tp, params, false);
  return tp.value(img_token_loss_node(tp, lm, bg, bb.vocab, content)).data[0];
}

template <class T>
T generation_loss(const BackbonesT<T>& bb, const TokenSequence& content,
                  const BridgeParamsT<T>& params) {
  Tape<T> tp;
  LmGraph<T> lm(tp, bb.lm, false);
  BridgeGraph<T> bg(tp, params, false);
  TensorT<T> target = text_encode_target(bb.tenc, content);
  return tp.value(generation_loss_node(tp, lm, bg, bb.vocab, content, target)).data[0];
}

// Direct text-to-image pathway: force the [IMG] run after the recipe text and
// decode the conditioning produced by f_w.
template <class T>
TensorT<T> t2i_generate(const BackbonesT<T>& bb, const BridgeParamsT<T>& params,
                        const TokenSequence& content) {
  Tape<T> tp;
  LmGraph<T> lm(tp, bb.lm, false);
  BridgeGraph<T> bg(tp, params, false);
  Var<T> img_hidden = img_run_hidden_node(tp, lm, bg, bb.vocab, content);
  return image_decode(bb.idec, tp.value(bg.qformer_node(img_hidden)));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainItem {
  Tensor v;              // visual_encode(image), d
  TokenSequence content; // plain words
  Tensor target;         // text_encode_target, L x r
};

TrainItem make_train_item(const Backbones& bb, const RecipeRecord& rec, const Tensor& image);

struct LossReport {
  double l_r = 0, l_p = 0, l_g = 0, total = 0;
};

// Stateless training schedule: step s trains on items (s*B + j) % n.
inline std::vector<std::size_t> train_batch_indices(std::uint64_t step, std::size_t batch_size,
                                                    std::size_t n_items) {
  std::vector<std::size_t> idx(batch_size);
  for (std::size_t j = 0; j < batch_size; ++j)
    idx[j] = static_cast<std::size_t>((step * batch_size + j) % n_items);
  return idx;
}

class Trainer {
 public:
  Trainer(const Backbones& bb, BridgeParams params, AdamHyper hp);

  // One optimizer step on the batch; losses averaged over the batch. A
  // non-finite loss aborts with the failing step index.
  LossReport train_step(std::span<const TrainItem> batch);

  const BridgeParams& params() const { return params_; }
  BridgeParams& params_mut() { return params_; }
  const std::vector<AdamState>& opt_states() const { return states_; }
  std::vector<AdamState>& opt_states_mut() { return states_; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }
  const AdamHyper& hyper() const { return hp_; }

 private:
  const Backbones* bb_;
  BridgeParams params_;
  std::vector<AdamState> states_;
  AdamHyper hp_;
  std::uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Interleaved generation
// ---------------------------------------------------------------------------

enum class SegmentKind { Text, Image };

struct GenSegment {
  SegmentKind kind = SegmentKind::Text;
  std::string text;  // Text segments
  Tensor image;      // Image segments

  static GenSegment of_text(std::string t) {
    GenSegment s;
    s.kind = SegmentKind::Text;
    s.text = std::move(t);
    return s;
  }
  static GenSegment of_image(Tensor img) {
    GenSegment s;
    s.kind = SegmentKind::Image;
    s.image = std::move(img);
    return s;
  }
};

struct GenOptions {
  std::size_t max_tokens = 64;  // budget of freely decoded tokens
  double temperature = 0.0;     // 0 => greedy
  std::uint64_t seed = 0;       // RNG for temperature sampling
};

struct GenResult {
  std::vector<GenSegment> segments;
  TokenSequence emitted;  // every id produced after the prompt, [IMG] runs included
};

// StepModel requirements (duck-typed so tests can substitute stub LMs):
//   const Vocab& vocab() const;
//   std::size_t max_seq() const;
//   Tensor prefix_from_image(const Tensor& image);               // k x e
//   Tensor next_logits(prefix_blocks, ids);                      // V+m
//   Tensor img_run_hidden(prefix_blocks, ids, run_start);        // m x e
//   Tensor image_from_hidden(const Tensor& img_hidden);          // H x W x C
template <class Model>
GenResult generate_interleaved(Model& model, const std::vector<GenSegment>& prompt,
                               const GenOptions& opt) {
  const Vocab& vb = model.vocab();
  const std::size_t m = static_cast<std::size_t>(vb.num_img());
  if (opt.max_tokens < 1) throw DimError("generate: max_tokens must be >= 1");

  std::vector<Tensor> prefix_blocks;
  TokenSequence ids{vb.bos_id()};
  std::size_t prefix_rows = 0;
  for (const GenSegment& seg : prompt) {
    if (seg.kind == SegmentKind::Image) {
      prefix_blocks.push_back(model.prefix_from_image(seg.image));
      prefix_rows += prefix_blocks.back().rows();
    } else {
      TokenSequence toks = vb.tokenize(seg.text);
      ids.insert(ids.end(), toks.begin(), toks.end());
    }
  }

  GenResult res;
  std::string cur_text;
  auto flush_text = [&] {
    if (!cur_text.empty()) {
      res.segments.push_back(GenSegment::of_text(cur_text));
      cur_text.clear();
    }
  };

  Rng rng(opt.seed);
  std::size_t free_emitted = 0;
  while (free_emitted < opt.max_tokens) {
    const std::size_t ctx = prefix_rows + ids.size();
    if (ctx + 1 > model.max_seq()) break;
    Tensor logits = model.next_logits(prefix_blocks, ids);
    if (logits.numel() != static_cast<std::size_t>(vb.total_size()))
      throw DimError("generate: model produced " + std::to_string(logits.numel()) +
                     " logits, expected " + std::to_string(vb.total_size()));

    std::vector<double> scores(logits.data.begin(), logits.data.end());
    scores[static_cast<std::size_t>(vb.pad_id())] = -1e300;
    scores[static_cast<std::size_t>(vb.bos_id())] = -1e300;
    // Only [IMG_1] may start a run; later [IMG_j] are always forced. A run
    // that would not fit in the context cannot start.
    for (std::size_t j = 1; j < m; ++j)
      scores[static_cast<std::size_t>(vb.img_id(static_cast<std::int32_t>(j)))] = -1e300;
    if (ctx + m > model.max_seq())
      scores[static_cast<std::size_t>(vb.img_id(0))] = -1e300;

    std::int32_t next;
    if (opt.temperature > 0.0) {
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      std::vector<double> probs(scores.size());
      double sum = 0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        probs[i] = std::exp((scores[i] - mx) / opt.temperature);
        sum += probs[i];
      }
      double u = rng.uniform01() * sum;
      std::size_t pick = 0;
      for (; pick + 1 < probs.size(); ++pick) {
        u -= probs[pick];
        if (u <= 0) break;
      }
      next = static_cast<std::int32_t>(pick);
    } else {
      std::size_t best = 0;
      for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
      next = static_cast<std::int32_t>(best);
    }

    if (next == vb.eos_id()) break;
    ++free_emitted;

    if (next == vb.img_id(0)) {
      const std::size_t run_start = ids.size();
      for (std::size_t j = 0; j < m; ++j) {
        ids.push_back(vb.img_id(static_cast<std::int32_t>(j)));
        res.emitted.push_back(vb.img_id(static_cast<std::int32_t>(j)));
      }
      Tensor img_hidden = model.img_run_hidden(prefix_blocks, ids, run_start);
      flush_text();
      res.segments.push_back(GenSegment::of_image(model.image_from_hidden(img_hidden)));
    } else {
      ids.push_back(next);
      res.emitted.push_back(next);
      if (!cur_text.empty()) cur_text.push_back(' ');
      cur_text += vb.token_name(next);
    }
  }
  flush_text();
  return res;
}

// Production step model over real backbones and a finished checkpoint.
class BridgeStepModel {
 public:
  BridgeStepModel(const Backbones& bb, const BridgeParams& params) : bb_(&bb), params_(&params) {}

  const Vocab& vocab() const { return bb_->vocab; }
  std::size_t max_seq() const { return bb_->lm.max_seq; }

  Tensor prefix_from_image(const Tensor& image) const {
    return image_prefix(*params_, visual_encode(bb_->venc, image));
  }

  Tensor next_logits(const std::vector<Tensor>& prefix_blocks, const TokenSequence& ids) const {
    Tape<float> tp;
    LmGraph<float> lm(tp, bb_->lm, false);
    Var<float> e_img = tp.constant(params_->e_img);
    Var<float> hidden = hidden_node(tp, lm, e_img, prefix_blocks, ids);
    const std::size_t last = tp.value(hidden).rows() - 1;
    Var<float> logits = lm.logits_from_hidden(tp.gather_rows(hidden, {last}), e_img);
    Tensor row = tp.value(logits);
    row.shape = {row.numel()};
    return row;
  }

  Tensor img_run_hidden(const std::vector<Tensor>& prefix_blocks, const TokenSequence& ids,
                        std::size_t run_start) const {
    Tape<float> tp;
    LmGraph<float> lm(tp, bb_->lm, false);
    Var<float> e_img = tp.constant(params_->e_img);
    Var<float> hidden = hidden_node(tp, lm, e_img, prefix_blocks, ids);
    std::size_t prefix_rows = 0;
    for (const Tensor& b : prefix_blocks) prefix_rows += b.rows();
    std::vector<std::size_t> rows(static_cast<std::size_t>(vocab().num_img()));
    std::iota(rows.begin(), rows.end(), prefix_rows + run_start);
    return tp.value(tp.gather_rows(hidden, rows));
  }

  Tensor image_from_hidden(const Tensor& img_hidden) const {
    return image_decode(bb_->idec, qformer_forward(*params_, img_hidden));
  }

 private:
  Var<float> hidden_node(Tape<float>& tp, LmGraph<float>& lm, Var<float> e_img,
                         const std::vector<Tensor>& prefix_blocks, const TokenSequence& ids) const {
    Var<float> seq = lm.tokens_embed(ids, e_img);
    for (auto it = prefix_blocks.rbegin(); it != prefix_blocks.rend(); ++it)
      seq = tp.concat_rows(tp.constant(*it), seq);
    return lm.hidden_from_embeds(seq);
  }

  const Backbones* bb_;
  const BridgeParams* params_;
};

}  // namespace chef
