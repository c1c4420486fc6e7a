#include "chef/backbones.hpp"

#include <cmath>

namespace chef {

namespace {

Tensor linear_init(std::vector<std::size_t> shape, Rng& rng, std::size_t fan_in) {
  return Tensor::rand_uniform(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

LmLayerT<float> init_lm_layer(Rng& rng, std::size_t e) {
  LmLayerT<float> l;
  l.ln1_g = Tensor::full({e}, 1.0f);
  l.ln1_b = Tensor::zeros({e});
  l.wq = linear_init({e, e}, rng, e);
  l.bq = Tensor::zeros({e});
  l.wk = linear_init({e, e}, rng, e);
  l.bk = Tensor::zeros({e});
  l.wv = linear_init({e, e}, rng, e);
  l.bv = Tensor::zeros({e});
  l.wo = linear_init({e, e}, rng, e);
  l.bo = Tensor::zeros({e});
  l.ln2_g = Tensor::full({e}, 1.0f);
  l.ln2_b = Tensor::zeros({e});
  l.w1 = linear_init({e, 4 * e}, rng, e);
  l.b1 = Tensor::zeros({4 * e});
  l.w2 = linear_init({4 * e, e}, rng, 4 * e);
  l.b2 = Tensor::zeros({e});
  return l;
}

// Token sequence the LM is pretrained on: [BOS] content [EOS], truncated to
// the positional table.
TokenSequence pretrain_sequence(const Vocab& vocab, const RecipeRecord& rec,
                                std::size_t max_seq) {
  TokenSequence ids = vocab.tokenize(recipe_model_text(rec));
  if (ids.size() > max_seq - 2) ids.resize(max_seq - 2);
  TokenSequence seq;
  seq.reserve(ids.size() + 2);
  seq.push_back(vocab.bos_id());
  seq.insert(seq.end(), ids.begin(), ids.end());
  seq.push_back(vocab.eos_id());
  return seq;
}

// Next-token NLL over a whole sequence; returns (loss node, token count).
std::pair<Var<float>, std::size_t> sequence_nll(Tape<float>& tp, LmGraph<float>& lm,
                                                const TokenSequence& seq) {
  Var<float> embeds = lm.tokens_embed(seq);
  Var<float> hidden = lm.hidden_from_embeds(embeds);
  std::vector<std::size_t> rows(seq.size() - 1);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Var<float> logits = lm.logits_from_hidden(tp.gather_rows(hidden, rows));
  TokenSequence targets(seq.begin() + 1, seq.end());
  return {tp.nll_sum(logits, targets), targets.size()};
}

void pretrain_lm(FrozenLmT<float>& lm, const Vocab& vocab, Rng data_rng) {
  std::vector<SynthEntry> entries =
      synth_entries(data_rng.next_u64(), kLmPretrainCorpus, 2, 2, 1);
  std::vector<TokenSequence> seqs;
  seqs.reserve(entries.size());
  for (const auto& e : entries) seqs.push_back(pretrain_sequence(vocab, e.record, lm.max_seq));

  std::vector<AdamState> states;
  std::vector<Tensor*> tensors;
  for_each_tensor(lm, [&](const std::string&, Tensor& t) {
    tensors.push_back(&t);
    states.push_back(AdamState::fresh(t.shape));
  });
  AdamHyper hp;  // lr 1e-3, betas 0.9/0.95

  for (std::size_t step = 0; step < kLmPretrainSteps; ++step) {
    Tape<float> tp;
    LmGraph<float> graph(tp, lm, /*trainable=*/true);
    Var<float> total{};
    std::size_t total_tokens = 0;
    for (std::size_t j = 0; j < kLmPretrainBatch; ++j) {
      const auto& seq = seqs[(step * kLmPretrainBatch + j) % seqs.size()];
      auto [nll, count] = sequence_nll(tp, graph, seq);
      total = total.valid() ? tp.add(total, nll) : nll;
      total_tokens += count;
    }
    Var<float> loss = tp.scale(total, 1.0f / static_cast<float>(total_tokens));
    tp.backward(loss);

    std::size_t ti = 0;
    auto step_one = [&](Var<float> v) {
      adam_step(*tensors[ti], tp.grad(v), states[ti], hp);
      ++ti;
    };
    step_one(graph.embed);
    step_one(graph.pos);
    for (const auto& lv : graph.layers) {
      step_one(lv.ln1_g);
      step_one(lv.ln1_b);
      step_one(lv.wq);
      step_one(lv.bq);
      step_one(lv.wk);
      step_one(lv.bk);
      step_one(lv.wv);
      step_one(lv.bv);
      step_one(lv.wo);
      step_one(lv.bo);
      step_one(lv.ln2_g);
      step_one(lv.ln2_b);
      step_one(lv.w1);
      step_one(lv.b1);
      step_one(lv.w2);
      step_one(lv.b2);
    }
    step_one(graph.lnf_g);
    step_one(graph.lnf_b);
  }
}

// Fits the decoder's linear map so that D(T_psi(y)) lands near the paired
// image, mirroring the pretrained text-to-image model the architecture
// assumes. Ridge regression on logit-pixels; deterministic from the seed.
void fit_image_decoder(FrozenImageDecoderT<float>& idec, const FrozenTextEncoderT<float>& tenc,
                       const Vocab& vocab, const DimsConfig& dims, Rng probe_rng) {
  const std::size_t feat_dim = dims.L * dims.r;
  const std::size_t n_px = dims.H * dims.W * dims.C;
  const std::size_t n = kDecoderProbeCorpus;
  std::vector<SynthEntry> entries =
      synth_entries(probe_rng.next_u64(), n, dims.H, dims.W, dims.C);

  std::vector<double> feats(n * feat_dim), targets(n * n_px);
  for (std::size_t i = 0; i < n; ++i) {
    TokenSequence ids = vocab.tokenize(recipe_model_text(entries[i].record));
    Tensor enc = text_encode_target(tenc, ids);
    for (std::size_t j = 0; j < feat_dim; ++j)
      feats[i * feat_dim + j] = static_cast<double>(enc.data[j]);
    for (std::size_t j = 0; j < n_px; ++j) {
      const double p =
          std::clamp(static_cast<double>(entries[i].image.data[j]), 0.02, 0.98);
      targets[i * n_px + j] = std::log(p / (1.0 - p));
    }
  }

  std::vector<double> mean_f(feat_dim, 0.0), mean_y(n_px, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < feat_dim; ++j) mean_f[j] += feats[i * feat_dim + j];
    for (std::size_t j = 0; j < n_px; ++j) mean_y[j] += targets[i * n_px + j];
  }
  for (double& v : mean_f) v /= static_cast<double>(n);
  for (double& v : mean_y) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < feat_dim; ++j) feats[i * feat_dim + j] -= mean_f[j];
    for (std::size_t j = 0; j < n_px; ++j) targets[i * n_px + j] -= mean_y[j];
  }

  // A = X^T X, B = X^T Y
  std::vector<double> a(feat_dim * feat_dim, 0.0), b(feat_dim * n_px, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = feats.data() + i * feat_dim;
    const double* y = targets.data() + i * n_px;
    for (std::size_t p = 0; p < feat_dim; ++p) {
      const double xp = x[p];
      if (xp == 0.0) continue;
      double* arow = a.data() + p * feat_dim;
      for (std::size_t q = 0; q < feat_dim; ++q) arow[q] += xp * x[q];
      double* brow = b.data() + p * n_px;
      for (std::size_t q = 0; q < n_px; ++q) brow[q] += xp * y[q];
    }
  }
  double trace = 0;
  for (std::size_t p = 0; p < feat_dim; ++p) trace += a[p * feat_dim + p];
  const double ridge = 1e-2 * trace / static_cast<double>(feat_dim) + 1e-8;

  std::vector<double> x = detail::ridge_solve(std::move(a), std::move(b), feat_dim, n_px, ridge);

  // x is [feat_dim x n_px]; decoder weight is its transpose.
  idec.h = dims.H;
  idec.w_ = dims.W;
  idec.c = dims.C;
  idec.w = Tensor::zeros({n_px, feat_dim});
  idec.b = Tensor::zeros({n_px});
  for (std::size_t px = 0; px < n_px; ++px) {
    double bias = mean_y[px];
    for (std::size_t f = 0; f < feat_dim; ++f) {
      const double wv = x[f * n_px + px];
      idec.w.at(px, f) = static_cast<float>(wv);
      bias -= wv * mean_f[f];
    }
    idec.b.data[px] = static_cast<float>(bias);
  }
  require_finite(idec.w, "fit_image_decoder");
  require_finite(idec.b, "fit_image_decoder");
}

}  // namespace

namespace detail {

std::vector<double> ridge_solve(std::vector<double> a, std::vector<double> b, std::size_t n,
                                std::size_t rhs, double ridge) {
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += ridge;
  // Cholesky: A = L L^T, stored in the lower triangle of a.
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
    if (diag <= 0.0) throw NumericError("ridge_solve: matrix not positive definite");
    const double ljj = std::sqrt(diag);
    a[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = v / ljj;
    }
  }
  // Solve L z = b, then L^T x = z, for all right-hand sides at once.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = a[i * n + k];
      if (lik == 0.0) continue;
      for (std::size_t c = 0; c < rhs; ++c) b[i * rhs + c] -= lik * b[k * rhs + c];
    }
    const double inv = 1.0 / a[i * n + i];
    for (std::size_t c = 0; c < rhs; ++c) b[i * rhs + c] *= inv;
  }
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double lki = a[k * n + ii];
      if (lki == 0.0) continue;
      for (std::size_t c = 0; c < rhs; ++c) b[ii * rhs + c] -= lki * b[k * rhs + c];
    }
    const double inv = 1.0 / a[ii * n + ii];
    for (std::size_t c = 0; c < rhs; ++c) b[ii * rhs + c] *= inv;
  }
  return b;
}

}  // namespace detail

Backbones build_backbones(std::uint64_t seed, const DimsConfig& dims) {
  Config probe_cfg;
  probe_cfg.dims = dims;
  validate_config(probe_cfg);

  Backbones bb;
  bb.dims = dims;
  bb.seed = seed;
  bb.vocab = Vocab::build(dims.m);
  Rng root(seed);

  const std::size_t v_rows = static_cast<std::size_t>(bb.vocab.base_size());
  const std::size_t e = dims.e;
  {
    Rng rng = root.fork("lm-init");
    bb.lm.width = e;
    bb.lm.max_seq = dims.max_seq;
    bb.lm.embed = Tensor::randn({v_rows, e}, rng, 0.1);
    bb.lm.pos = Tensor::randn({dims.max_seq, e}, rng, 0.1);
    for (std::size_t i = 0; i < kLmLayers; ++i) bb.lm.layers.push_back(init_lm_layer(rng, e));
    bb.lm.lnf_g = Tensor::full({e}, 1.0f);
    bb.lm.lnf_b = Tensor::zeros({e});
  }
  {
    Rng rng = root.fork("visual-encoder");
    const std::size_t n_px = dims.H * dims.W * dims.C;
    bb.venc.w = Tensor::randn({dims.d, n_px}, rng, 1.0 / std::sqrt(static_cast<double>(n_px)));
    bb.venc.b = Tensor::randn({dims.d}, rng, 0.1);
  }
  {
    Rng rng = root.fork("text-encoder");
    bb.tenc.out_rows = dims.L;
    bb.tenc.width = dims.r;
    bb.tenc.embed = Tensor::randn({v_rows, dims.r}, rng, 1.0);
    bb.tenc.wq = linear_init({dims.r, dims.r}, rng, dims.r);
    bb.tenc.wk = linear_init({dims.r, dims.r}, rng, dims.r);
    bb.tenc.wv = linear_init({dims.r, dims.r}, rng, dims.r);
    bb.tenc.wo = linear_init({dims.r, dims.r}, rng, dims.r);
  }

  pretrain_lm(bb.lm, bb.vocab, root.fork("lm-pretrain"));
  fit_image_decoder(bb.idec, bb.tenc, bb.vocab, dims, root.fork("idec-probe"));
  return bb;
}

Backbones backbones_skeleton(const DimsConfig& dims) {
  Config probe_cfg;
  probe_cfg.dims = dims;
  validate_config(probe_cfg);

  Backbones bb;
  bb.dims = dims;
  bb.vocab = Vocab::build(dims.m);
  const std::size_t v_rows = static_cast<std::size_t>(bb.vocab.base_size());
  const std::size_t e = dims.e;
  bb.lm.width = e;
  bb.lm.max_seq = dims.max_seq;
  bb.lm.embed = Tensor::zeros({v_rows, e});
  bb.lm.pos = Tensor::zeros({dims.max_seq, e});
  for (std::size_t i = 0; i < kLmLayers; ++i) {
    LmLayerT<float> l;
    l.ln1_g = Tensor::zeros({e});
    l.ln1_b = Tensor::zeros({e});
    l.wq = Tensor::zeros({e, e});
    l.bq = Tensor::zeros({e});
    l.wk = Tensor::zeros({e, e});
    l.bk = Tensor::zeros({e});
    l.wv = Tensor::zeros({e, e});
    l.bv = Tensor::zeros({e});
    l.wo = Tensor::zeros({e, e});
    l.bo = Tensor::zeros({e});
    l.ln2_g = Tensor::zeros({e});
    l.ln2_b = Tensor::zeros({e});
    l.w1 = Tensor::zeros({e, 4 * e});
    l.b1 = Tensor::zeros({4 * e});
    l.w2 = Tensor::zeros({4 * e, e});
    l.b2 = Tensor::zeros({e});
    bb.lm.layers.push_back(std::move(l));
  }
  bb.lm.lnf_g = Tensor::zeros({e});
  bb.lm.lnf_b = Tensor::zeros({e});
  const std::size_t n_px = dims.H * dims.W * dims.C;
  bb.venc.w = Tensor::zeros({dims.d, n_px});
  bb.venc.b = Tensor::zeros({dims.d});
  bb.tenc.out_rows = dims.L;
  bb.tenc.width = dims.r;
  bb.tenc.embed = Tensor::zeros({v_rows, dims.r});
  bb.tenc.wq = Tensor::zeros({dims.r, dims.r});
  bb.tenc.wk = Tensor::zeros({dims.r, dims.r});
  bb.tenc.wv = Tensor::zeros({dims.r, dims.r});
  bb.tenc.wo = Tensor::zeros({dims.r, dims.r});
  bb.idec.h = dims.H;
  bb.idec.w_ = dims.W;
  bb.idec.c = dims.C;
  bb.idec.w = Tensor::zeros({n_px, dims.L * dims.r});
  bb.idec.b = Tensor::zeros({n_px});
  return bb;
}

double lm_heldout_nll(const Backbones& bb, std::size_t n_texts) {
  Rng rng = Rng(bb.seed).fork("lm-heldout");
  std::vector<SynthEntry> entries = synth_entries(rng.next_u64(), n_texts, 2, 2, 1);
  double total = 0;
  std::size_t tokens = 0;
  for (const auto& e : entries) {
    TokenSequence seq = pretrain_sequence(bb.vocab, e.record, bb.lm.max_seq);
    Tape<float> tp;
    LmGraph<float> graph(tp, bb.lm, false);
    auto [nll, count] = sequence_nll(tp, graph, seq);
    total += static_cast<double>(tp.value(nll).data[0]);
    tokens += count;
  }
  return total / static_cast<double>(tokens);
}

}  // namespace chef
