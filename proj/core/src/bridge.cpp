#include "chef/bridge.hpp"

#include <cmath>

namespace chef {

namespace {

Tensor linear_init(std::vector<std::size_t> shape, Rng& rng, std::size_t fan_in) {
  return Tensor::rand_uniform(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

LmLayerT<float> init_enc_layer(Rng& rng, std::size_t r) {
  LmLayerT<float> l;
  l.ln1_g = Tensor::full({r}, 1.0f);
  l.ln1_b = Tensor::zeros({r});
  l.wq = linear_init({r, r}, rng, r);
  l.bq = Tensor::zeros({r});
  l.wk = linear_init({r, r}, rng, r);
  l.bk = Tensor::zeros({r});
  l.wv = linear_init({r, r}, rng, r);
  l.bv = Tensor::zeros({r});
  l.wo = linear_init({r, r}, rng, r);
  l.bo = Tensor::zeros({r});
  l.ln2_g = Tensor::full({r}, 1.0f);
  l.ln2_b = Tensor::zeros({r});
  l.w1 = linear_init({r, 4 * r}, rng, r);
  l.b1 = Tensor::zeros({4 * r});
  l.w2 = linear_init({4 * r, r}, rng, 4 * r);
  l.b2 = Tensor::zeros({r});
  return l;
}

QDecLayerT<float> init_dec_layer(Rng& rng, std::size_t r) {
  QDecLayerT<float> l;
  l.ln1_g = Tensor::full({r}, 1.0f);
  l.ln1_b = Tensor::zeros({r});
  l.sq = linear_init({r, r}, rng, r);
  l.sbq = Tensor::zeros({r});
  l.sk = linear_init({r, r}, rng, r);
  l.sbk = Tensor::zeros({r});
  l.sv = linear_init({r, r}, rng, r);
  l.sbv = Tensor::zeros({r});
  l.so = linear_init({r, r}, rng, r);
  l.sbo = Tensor::zeros({r});
  l.lnx_g = Tensor::full({r}, 1.0f);
  l.lnx_b = Tensor::zeros({r});
  l.xq = linear_init({r, r}, rng, r);
  l.xbq = Tensor::zeros({r});
  l.xk = linear_init({r, r}, rng, r);
  l.xbk = Tensor::zeros({r});
  l.xv = linear_init({r, r}, rng, r);
  l.xbv = Tensor::zeros({r});
  l.xo = linear_init({r, r}, rng, r);
  l.xbo = Tensor::zeros({r});
  l.ln2_g = Tensor::full({r}, 1.0f);
  l.ln2_b = Tensor::zeros({r});
  l.w1 = linear_init({r, 4 * r}, rng, r);
  l.b1 = Tensor::zeros({4 * r});
  l.w2 = linear_init({4 * r, r}, rng, 4 * r);
  l.b2 = Tensor::zeros({r});
  return l;
}

}  // namespace

BridgeParams init_bridge(std::uint64_t seed, const DimsConfig& dims) {
  Rng rng = Rng(seed).fork("bridge-init");
  BridgeParams p;
  p.k = dims.k;
  p.w_recipe = linear_init({dims.d, dims.k * dims.e}, rng, dims.d);
  p.e_img = linear_init({dims.m, dims.e}, rng, dims.e);
  p.qf.in_w = linear_init({dims.e, dims.r}, rng, dims.e);
  p.qf.in_b = Tensor::zeros({dims.r});
  for (std::size_t i = 0; i < kQFormerLayers; ++i) p.qf.enc.push_back(init_enc_layer(rng, dims.r));
  p.qf.enc_lnf_g = Tensor::full({dims.r}, 1.0f);
  p.qf.enc_lnf_b = Tensor::zeros({dims.r});
  for (std::size_t i = 0; i < kQFormerLayers; ++i) p.qf.dec.push_back(init_dec_layer(rng, dims.r));
  p.qf.lnf_g = Tensor::full({dims.r}, 1.0f);
  p.qf.lnf_b = Tensor::zeros({dims.r});
  p.qf.out_w = linear_init({dims.r, dims.r}, rng, dims.r);
  p.qf.out_b = Tensor::zeros({dims.r});
  p.queries = Tensor::randn({dims.L, dims.r}, rng, 0.02);
  return p;
}

TrainItem make_train_item(const Backbones& bb, const RecipeRecord& rec, const Tensor& image) {
  TrainItem item;
  item.v = visual_encode(bb.venc, image);
  item.content = bb.vocab.tokenize(recipe_model_text(rec));
  // Leave room for BOS/EOS on the recipe branch and BOS + the IMG run on the
  // generation branch.
  const std::size_t m = static_cast<std::size_t>(bb.vocab.num_img());
  const std::size_t cap =
      std::min(bb.lm.max_seq - m - 1, bb.lm.max_seq - bb.dims.k - 2);
  if (item.content.size() > cap) item.content.resize(cap);
  item.target = text_encode_target(bb.tenc, item.content);
  return item;
}

Trainer::Trainer(const Backbones& bb, BridgeParams params, AdamHyper hp)
    : bb_(&bb), params_(std::move(params)), hp_(hp) {
  params_.for_each_param([&](const std::string&, const Tensor& t) {
    states_.push_back(AdamState::fresh(t.shape));
  });
}

LossReport Trainer::train_step(std::span<const TrainItem> batch) {
  if (batch.empty()) throw DimError("train_step: empty batch");
  try {
    Tape<float> tp;
    LmGraph<float> lm(tp, bb_->lm, false);
    BridgeGraph<float> bg(tp, params_, /*trainable=*/true);
    Var<float> total{};
    LossReport rep;
    for (const TrainItem& item : batch) {
      Var<float> lr = recipe_loss_node(tp, lm, bg, bb_->vocab, item.v, item.content);
      PgNodes<float> pg =
          img_and_gen_loss_nodes(tp, lm, bg, bb_->vocab, item.content, item.target);
      rep.l_r += static_cast<double>(tp.value(lr).data[0]);
      rep.l_p += static_cast<double>(tp.value(pg.l_p).data[0]);
      rep.l_g += static_cast<double>(tp.value(pg.l_g).data[0]);
      Var<float> tri = tp.add(lr, tp.add(pg.l_p, pg.l_g));
      total = total.valid() ? tp.add(total, tri) : tri;
    }
    tp.backward(tp.scale(total, 1.0f / static_cast<float>(batch.size())));

    std::size_t i = 0;
    params_.for_each_param([&](const std::string&, Tensor& t) {
      adam_step(t, tp.grad(bg.named[i].second), states_[i], hp_);
      ++i;
    });
    ++step_;

    const double inv = 1.0 / static_cast<double>(batch.size());
    rep.l_r *= inv;
    rep.l_p *= inv;
    rep.l_g *= inv;
    rep.total = rep.l_r + rep.l_p + rep.l_g;
    return rep;
  } catch (const NumericError& e) {
    throw NumericError("train step " + std::to_string(step_) + ": " + e.what());
  }
}

}  // namespace chef
