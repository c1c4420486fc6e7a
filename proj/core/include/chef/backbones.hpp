#pragma once

#include <array>
#include <type_traits>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "chef/adam.hpp"
#include "chef/config.hpp"
#include "chef/corpus.hpp"
#include "chef/rng.hpp"
#include "chef/sha256.hpp"
#include "chef/tape.hpp"
#include "chef/tensor.hpp"
#include "chef/vocab.hpp"

namespace chef {

constexpr std::size_t kAttnHeads = 4;
constexpr std::size_t kLmLayers = 2;
constexpr double kLnEps = 1e-5;

// Number of steps the stand-in LM is pretrained on synthetic text before
// freezing. Fixed so backbones are a pure function of (seed, dims).
constexpr std::size_t kLmPretrainSteps = 2000;
constexpr std::size_t kLmPretrainBatch = 4;
constexpr std::size_t kLmPretrainCorpus = 320;
constexpr std::size_t kDecoderProbeCorpus = 384;

// ---------------------------------------------------------------------------
// Frozen structures
// ---------------------------------------------------------------------------

template <class T>
struct LmLayerT {
  TensorT<T> ln1_g, ln1_b;
  TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
  TensorT<T> ln2_g, ln2_b;
  TensorT<T> w1, b1, w2, b2;
};

// Decoder-only transformer with tied input/output embedding.
template <class T>
struct FrozenLmT {
  std::size_t width = 0;    // e
  std::size_t max_seq = 0;
  TensorT<T> embed;  // V x e
  TensorT<T> pos;    // max_seq x e
  std::vector<LmLayerT<T>> layers;
  TensorT<T> lnf_g, lnf_b;
};

template <class T>
struct FrozenVisualEncoderT {
  TensorT<T> w;  // d x (H*W*C)
  TensorT<T> b;  // d
};

// T_psi: seeded embedding + sinusoidal positions + one self-attention layer,
// truncated/padded to exactly L rows of width r.
template <class T>
struct FrozenTextEncoderT {
  std::size_t out_rows = 0;  // L
  std::size_t width = 0;     // r
  TensorT<T> embed;          // V x r
  TensorT<T> wq, wk, wv, wo;
};

// D_psi: linear map from flattened L x r conditioning to pixels + sigmoid.
template <class T>
struct FrozenImageDecoderT {
  std::size_t h = 0, w_ = 0, c = 0;
  TensorT<T> w;  // (H*W*C) x (L*r)
  TensorT<T> b;  // H*W*C
};

template <class T>
struct BackbonesT {
  DimsConfig dims;
  std::uint64_t seed = 0;
  Vocab vocab;
  FrozenLmT<T> lm;
  FrozenVisualEncoderT<T> venc;
  FrozenTextEncoderT<T> tenc;
  FrozenImageDecoderT<T> idec;

  template <class U>
  BackbonesT<U> cast() const {
    BackbonesT<U> out;
    out.dims = dims;
    out.seed = seed;
    out.vocab = vocab;
    out.lm.width = lm.width;
    out.lm.max_seq = lm.max_seq;
    out.lm.embed = lm.embed.template cast<U>();
    out.lm.pos = lm.pos.template cast<U>();
    for (const auto& l : lm.layers) {
      LmLayerT<U> nl;
      nl.ln1_g = l.ln1_g.template cast<U>();
      nl.ln1_b = l.ln1_b.template cast<U>();
      nl.wq = l.wq.template cast<U>();
      nl.bq = l.bq.template cast<U>();
      nl.wk = l.wk.template cast<U>();
      nl.bk = l.bk.template cast<U>();
      nl.wv = l.wv.template cast<U>();
      nl.bv = l.bv.template cast<U>();
      nl.wo = l.wo.template cast<U>();
      nl.bo = l.bo.template cast<U>();
      nl.ln2_g = l.ln2_g.template cast<U>();
      nl.ln2_b = l.ln2_b.template cast<U>();
      nl.w1 = l.w1.template cast<U>();
      nl.b1 = l.b1.template cast<U>();
      nl.w2 = l.w2.template cast<U>();
      nl.b2 = l.b2.template cast<U>();
      out.lm.layers.push_back(std::move(nl));
    }
    out.lm.lnf_g = lm.lnf_g.template cast<U>();
    out.lm.lnf_b = lm.lnf_b.template cast<U>();
    out.venc.w = venc.w.template cast<U>();
    out.venc.b = venc.b.template cast<U>();
    out.tenc.out_rows = tenc.out_rows;
    out.tenc.width = tenc.width;
    out.tenc.embed = tenc.embed.template cast<U>();
    out.tenc.wq = tenc.wq.template cast<U>();
    out.tenc.wk = tenc.wk.template cast<U>();
    out.tenc.wv = tenc.wv.template cast<U>();
    out.tenc.wo = tenc.wo.template cast<U>();
    out.idec.h = idec.h;
    out.idec.w_ = idec.w_;
    out.idec.c = idec.c;
    out.idec.w = idec.w.template cast<U>();
    out.idec.b = idec.b.template cast<U>();
    return out;
  }
};

using Backbones = BackbonesT<float>;

// Enumerates every LM tensor in a fixed order; fn(name, tensor&).
template <class T, class Self, class Fn>
void for_each_lm_tensor_impl(Self& lm, Fn&& fn) {
  fn("lm/embed", lm.embed);
  fn("lm/pos", lm.pos);
  for (std::size_t i = 0; i < lm.layers.size(); ++i) {
    auto& l = lm.layers[i];
    const std::string p = "lm/layer" + std::to_string(i) + "/";
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
  fn("lm/lnf_g", lm.lnf_g);
  fn("lm/lnf_b", lm.lnf_b);
}

template <class T, class Fn>
void for_each_tensor(FrozenLmT<T>& lm, Fn&& fn) {
  for_each_lm_tensor_impl<T>(lm, fn);
}
template <class T, class Fn>
void for_each_tensor(const FrozenLmT<T>& lm, Fn&& fn) {
  for_each_lm_tensor_impl<T>(lm, fn);
}

template <class T, class Self, class Fn>
void for_each_backbone_tensor_impl(Self& bb, Fn&& fn) {
  for_each_tensor(bb.lm, fn);
  fn("venc/w", bb.venc.w);
  fn("venc/b", bb.venc.b);
  fn("tenc/embed", bb.tenc.embed);
  fn("tenc/wq", bb.tenc.wq);
  fn("tenc/wk", bb.tenc.wk);
  fn("tenc/wv", bb.tenc.wv);
  fn("tenc/wo", bb.tenc.wo);
  fn("idec/w", bb.idec.w);
  fn("idec/b", bb.idec.b);
}

template <class T, class Fn>
void for_each_tensor(BackbonesT<T>& bb, Fn&& fn) {
  for_each_backbone_tensor_impl<T>(bb, fn);
}
template <class T, class Fn>
void for_each_tensor(const BackbonesT<T>& bb, Fn&& fn) {
  for_each_backbone_tensor_impl<T>(bb, fn);
}

// SHA-256 over names, shapes and payloads of every frozen tensor.
inline std::string backbones_sha256(const Backbones& bb) {
  Sha256 h;
  for_each_tensor(bb, [&](const std::string& name, const Tensor& t) {
    h.update(name);
    std::uint32_t nd = static_cast<std::uint32_t>(t.ndim());
    h.update(&nd, 4);
    for (std::size_t d : t.shape) {
      std::uint32_t d32 = static_cast<std::uint32_t>(d);
      h.update(&d32, 4);
    }
    h.update(t.data.data(), t.data.size() * sizeof(float));
  });
  return h.hex_digest();
}

// ---------------------------------------------------------------------------
// Tape graph builders shared by pretraining, bridge losses and decoding
// ---------------------------------------------------------------------------

// Multi-head attention block: q_in attends over kv_in. mask, when present, is
// an additive [Tq x Tk] matrix applied to every head's scores.
template <class T>
Var<T> attention_block(Tape<T>& tp, Var<T> q_in, Var<T> kv_in, Var<T> wq, Var<T> bq, Var<T> wk,
                       Var<T> bk, Var<T> wv, Var<T> bv, Var<T> wo, Var<T> bo,
                       std::size_t n_heads, std::type_identity_t<const TensorT<T>*> mask) {
  const std::size_t width = tp.value(q_in).cols();
  if (width % n_heads != 0) throw DimError("attention: width not divisible by heads");
  const std::size_t hd = width / n_heads;
  Var<T> q = tp.add_rowvec(tp.matmul(q_in, wq), bq);
  Var<T> k = tp.add_rowvec(tp.matmul(kv_in, wk), bk);
  Var<T> v = tp.add_rowvec(tp.matmul(kv_in, wv), bv);
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  std::vector<Var<T>> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Var<T> qh = tp.slice_cols(q, h * hd, (h + 1) * hd);
    Var<T> kh = tp.slice_cols(k, h * hd, (h + 1) * hd);
    Var<T> vh = tp.slice_cols(v, h * hd, (h + 1) * hd);
    Var<T> scores = tp.scale(tp.matmul_nt(qh, kh), inv_sqrt);
    Var<T> probs = tp.softmax_rows(scores, mask);
    heads.push_back(tp.matmul(probs, vh));
  }
  Var<T> ctx = tp.concat_cols(heads);
  return tp.add_rowvec(tp.matmul(ctx, wo), bo);
}

template <class T>
Var<T> mlp_block(Tape<T>& tp, Var<T> x, Var<T> w1, Var<T> b1, Var<T> w2, Var<T> b2) {
  return tp.add_rowvec(tp.matmul(tp.gelu(tp.add_rowvec(tp.matmul(x, w1), b1)), w2), b2);
}

// The frozen LM registered on a tape. trainable=true is only used while the
// stand-in is being pretrained inside build_backbones.
template <class T>
struct LmGraph {
  struct LayerVars {
    Var<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  Tape<T>* tp;
  std::size_t width, max_seq;
  Var<T> embed, pos;
  std::vector<LayerVars> layers;
  Var<T> lnf_g, lnf_b;

  LmGraph(Tape<T>& tape, const FrozenLmT<T>& lm, bool trainable = false) : tp(&tape) {
    width = lm.width;
    max_seq = lm.max_seq;
    auto reg = [&](const TensorT<T>& t) {
      return trainable ? tape.param(t) : tape.constant(t);
    };
    embed = reg(lm.embed);
    pos = reg(lm.pos);
    for (const auto& l : lm.layers) {
      LayerVars lv;
      lv.ln1_g = reg(l.ln1_g);
      lv.ln1_b = reg(l.ln1_b);
      lv.wq = reg(l.wq);
      lv.bq = reg(l.bq);
      lv.wk = reg(l.wk);
      lv.bk = reg(l.bk);
      lv.wv = reg(l.wv);
      lv.bv = reg(l.bv);
      lv.wo = reg(l.wo);
      lv.bo = reg(l.bo);
      lv.ln2_g = reg(l.ln2_g);
      lv.ln2_b = reg(l.ln2_b);
      lv.w1 = reg(l.w1);
      lv.b1 = reg(l.b1);
      lv.w2 = reg(l.w2);
      lv.b2 = reg(l.b2);
      layers.push_back(lv);
    }
    lnf_g = reg(lm.lnf_g);
    lnf_b = reg(lm.lnf_b);
  }

  std::int32_t vocab_rows() const {
    return static_cast<std::int32_t>(tp->value(embed).rows());
  }

  // Token rows only; positions are added in hidden_from_embeds. e_img, when
  // valid, supplies the rows for ids >= V.
  Var<T> tokens_embed(const TokenSequence& ids, Var<T> e_img = {}) {
    return tp->embed(ids, embed, e_img, vocab_rows());
  }

  // seq: [T x e] input rows (visual prefix and/or token embeddings).
  // Causal: position i only attends to positions <= i.
  Var<T> hidden_from_embeds(Var<T> seq) {
    const std::size_t n = tp->value(seq).rows();
    if (n > max_seq)
      throw DimError("lm: sequence length " + std::to_string(n) + " exceeds max_seq " +
                     std::to_string(max_seq));
    std::vector<std::size_t> iota(n);
    std::iota(iota.begin(), iota.end(), std::size_t{0});
    Var<T> x = tp->add(seq, tp->gather_rows(pos, iota));
    const TensorT<T> mask = causal_mask<T>(n);
    for (const auto& l : layers) {
      Var<T> ln = tp->layer_norm(x, l.ln1_g, l.ln1_b, static_cast<T>(kLnEps));
      Var<T> a = attention_block(*tp, ln, ln, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo,
                                 kAttnHeads, &mask);
      x = tp->add(x, a);
      Var<T> m = mlp_block(*tp, tp->layer_norm(x, l.ln2_g, l.ln2_b, static_cast<T>(kLnEps)),
                           l.w1, l.b1, l.w2, l.b2);
      x = tp->add(x, m);
    }
    return tp->layer_norm(x, lnf_g, lnf_b, static_cast<T>(kLnEps));
  }

  // Tied readout: logits over V (+m when e_img is valid) columns.
  Var<T> logits_from_hidden(Var<T> hidden, Var<T> e_img = {}) {
    Var<T> table = e_img.valid() ? tp->concat_rows(embed, e_img) : embed;
    return tp->matmul_nt(hidden, table);
  }
};

// ---------------------------------------------------------------------------
// Plain (value-level) backbone ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> visual_encode(const FrozenVisualEncoderT<T>& venc, const TensorT<T>& image) {
  if (image.numel() != venc.w.cols())
    throw DimError("visual_encode: image " + shape_str(image.shape) + " does not flatten to " +
                   std::to_string(venc.w.cols()) + " values");
  const std::size_t d = venc.w.rows();
  TensorT<T> out = TensorT<T>::zeros({d});
  for (std::size_t i = 0; i < d; ++i) {
    double acc = static_cast<double>(venc.b.data[i]);
    const T* row = venc.w.row_ptr(i);
    for (std::size_t j = 0; j < image.numel(); ++j)
      acc += static_cast<double>(row[j]) * static_cast<double>(image.data[j]);
    out.data[i] = static_cast<T>(std::tanh(acc));
  }
  require_finite(out, "visual_encode");
  return out;
}

template <class T>
TensorT<T> sinusoidal_rows(std::size_t n, std::size_t width) {
  TensorT<T> out = TensorT<T>::zeros({n, width});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i * 2 < width; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                 static_cast<double>(width));
      out.at(t, 2 * i) = static_cast<T>(std::sin(static_cast<double>(t) * freq));
      if (2 * i + 1 < width) out.at(t, 2 * i + 1) = static_cast<T>(std::cos(static_cast<double>(t) * freq));
    }
  return out;
}

// T_psi: output always L x r regardless of input length.
template <class T>
TensorT<T> text_encode_target(const FrozenTextEncoderT<T>& tenc, const TokenSequence& tokens) {
  if (tokens.empty()) throw DimError("text_encode_target: empty token sequence");
  const std::size_t r = tenc.width;
  const std::size_t n = tokens.size();
  TensorT<T> x = TensorT<T>::zeros({n, r});
  const TensorT<T> pe = sinusoidal_rows<T>(n, r);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t id = tokens[i];
    if (id < 0 || static_cast<std::size_t>(id) >= tenc.embed.rows())
      throw VocabError("text_encode_target: token id " + std::to_string(id) + " out of range");
    for (std::size_t j = 0; j < r; ++j)
      x.at(i, j) = tenc.embed.at(static_cast<std::size_t>(id), j) + pe.at(i, j);
  }
  // one self-attention layer with residual, no mask
  Tape<T> tp;
  auto xv = tp.constant(x);
  auto att = attention_block(tp, xv, xv, tp.constant(tenc.wq),
                             tp.constant(TensorT<T>::zeros({r})), tp.constant(tenc.wk),
                             tp.constant(TensorT<T>::zeros({r})), tp.constant(tenc.wv),
                             tp.constant(TensorT<T>::zeros({r})), tp.constant(tenc.wo),
                             tp.constant(TensorT<T>::zeros({r})), kAttnHeads,
                             nullptr);
  TensorT<T> h = tp.value(tp.add(xv, att));

  TensorT<T> out = TensorT<T>::zeros({tenc.out_rows, r});
  const std::size_t copy_rows = std::min(tenc.out_rows, n);
  for (std::size_t i = 0; i < copy_rows; ++i)
    for (std::size_t j = 0; j < r; ++j) out.at(i, j) = h.at(i, j);
  return out;
}

template <class T>
TensorT<T> image_decode(const FrozenImageDecoderT<T>& idec, const TensorT<T>& cond) {
  if (cond.numel() != idec.w.cols())
    throw DimError("image_decode: conditioning " + shape_str(cond.shape) +
                   " does not flatten to " + std::to_string(idec.w.cols()) + " values");
  const std::size_t n_px = idec.w.rows();
  TensorT<T> out = TensorT<T>::zeros({idec.h, idec.w_, idec.c});
  for (std::size_t i = 0; i < n_px; ++i) {
    double acc = static_cast<double>(idec.b.data[i]);
    const T* row = idec.w.row_ptr(i);
    for (std::size_t j = 0; j < cond.numel(); ++j)
      acc += static_cast<double>(row[j]) * static_cast<double>(cond.data[j]);
    out.data[i] = static_cast<T>(1.0 / (1.0 + std::exp(-acc)));
  }
  require_finite(out, "image_decode");
  return out;
}

// Full-sequence LM forward at value level: logits [T x (V+m)] when img_embeds
// given (else T x V) and final hidden states [T x e].
struct LmForwardOut {
  Tensor logits;
  Tensor hidden;
};

inline LmForwardOut lm_forward(const Backbones& bb, const Tensor* prefix,
                               const TokenSequence& tokens, const Tensor* img_embeds) {
  Tape<float> tp;
  LmGraph<float> lm(tp, bb.lm, false);
  Var<float> e_img{};
  if (img_embeds) e_img = tp.constant(*img_embeds);
  Var<float> tok = lm.tokens_embed(tokens, e_img);
  Var<float> seq = tok;
  if (prefix) {
    if (prefix->ndim() != 2 || prefix->cols() != bb.lm.width)
      throw DimError("lm_forward: prefix " + shape_str(prefix->shape) + " vs width " +
                     std::to_string(bb.lm.width));
    seq = tp.concat_rows(tp.constant(*prefix), tok);
  }
  Var<float> hidden = lm.hidden_from_embeds(seq);
  Var<float> logits = lm.logits_from_hidden(hidden, e_img);
  return {tp.value(logits), tp.value(hidden)};
}

// ---------------------------------------------------------------------------
// build_backbones
// ---------------------------------------------------------------------------

namespace detail {

// Solves (A + ridge*I) X = B in f64 via Cholesky; A is n x n SPD, B n x rhs.
// Returns X as an n x rhs row-major vector.
std::vector<double> ridge_solve(std::vector<double> a, std::vector<double> b, std::size_t n,
                                std::size_t rhs, double ridge);

}  // namespace detail

Backbones build_backbones(std::uint64_t seed, const DimsConfig& dims);

// Structure with the right shapes but zeroed tensors; the checkpoint loader
// fills it in.
Backbones backbones_skeleton(const DimsConfig& dims);

// Mean per-token NLL of the pretrained LM on held-out synthetic text.
double lm_heldout_nll(const Backbones& bb, std::size_t n_texts = 64);

}  // namespace chef
